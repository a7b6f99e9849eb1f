"""Brute-force reference implementations and the equivalence suites behind ``astgcrn oracle``.

The references here use explicit Python loops over nodes, depths and time
steps on plain arrays; they share no code path with the fused kernels.
"""
import math
import time

import numpy as np

from . import kernels
from .attention import (
    AttentionParams,
    InformerSelection,
    TransformerBlockParams,
    informer_block,
    multi_head_self_attention,
    positional_encoding,
    prob_sparse_attention,
    query_dilution,
    transformer_block,
)
from .gcrn import GcrnCellParams, gcrn_cell_step
from .gradcheck import finite_diff_check
from .graph import AgcWeights, NodeEmbedding, adaptive_adjacency, agc_forward, cheb_stack
from .model import ASTGCRN, ModelConfig, l1_loss
from .tensor import Tensor


def dense_cheb_loop(L, K):
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    out = [np.eye(n)]
    if K >= 2:
        out.append(L.copy())
    while len(out) < K:
        nxt = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                nxt[i, j] = 2.0 * sum(L[i, m] * out[-1][m, j] for m in range(n)) - out[-2][i, j]
        out.append(nxt)
    return np.stack(out)


def agc_dense_loop(X, S, E, W, b=None):
    """Materialize every per-node kernel E[n] @ W and apply it node by node."""
    X = np.asarray(X, dtype=np.float64)
    n_nodes, c_in = X.shape
    K = S.shape[0]
    d, _, _, c_out = W.shape
    psi = np.zeros((n_nodes, K, c_in, c_out))
    for n in range(n_nodes):
        for dd in range(d):
            psi[n] += E[n, dd] * W[dd]
    out = np.zeros((n_nodes, c_out))
    for n in range(n_nodes):
        for k in range(K):
            row = np.zeros(c_in)
            for m in range(n_nodes):
                row += S[k, n, m] * X[m]
            out[n] += row @ psi[n, k]
        if b is not None:
            for dd in range(d):
                out[n] += E[n, dd] * b[dd]
    return out


def _sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def gcrn_cell_loop(x, h, Wz, Wr, Wh, bz, br, bh, S, E):
    """Gated update on one sample (N, C) with dense-loop convolutions."""
    xh = np.concatenate([x, h], axis=-1)
    z = _sig(agc_dense_loop(xh, S, E, Wz, bz))
    r = _sig(agc_dense_loop(xh, S, E, Wr, br))
    cand = np.tanh(agc_dense_loop(np.concatenate([x, r * h], axis=-1), S, E, Wh, bh))
    return z * h + (1.0 - z) * cand


def attention_loop(Q, K, V):
    """Row-by-row softmax(q K^T / sqrt d) V."""
    d = Q.shape[-1]
    out = np.zeros((Q.shape[0], V.shape[1]))
    for i in range(Q.shape[0]):
        logits = np.array([Q[i] @ K[j] / math.sqrt(d) for j in range(K.shape[0])])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        for j in range(K.shape[0]):
            out[i] += w[j] * V[j]
    return out


def dilution_loop(Q, K):
    d = Q.shape[-1]
    out = np.zeros(Q.shape[0])
    for i in range(Q.shape[0]):
        vals = [Q[i] @ K[j] / math.sqrt(d) for j in range(K.shape[0])]
        out[i] = max(vals) - sum(vals) / len(vals)
    return out


# ------------------------------------------------------------------ suites

def _result(name, ok, detail):
    return {"check": name, "passed": bool(ok), "detail": detail}


def suite_chebyshev(seed=0):
    rng = np.random.default_rng(seed)
    res = []
    L = rng.uniform(size=(5, 5))
    L /= L.sum(axis=1, keepdims=True)
    s2 = cheb_stack(L, 2).T.data
    res.append(_result("K=2 is [I, L]", np.array_equal(s2[0], np.eye(5)) and np.array_equal(s2[1], L), "exact"))
    s3 = cheb_stack(L, 3).T.data
    err = float(np.abs(s3[2] - (2 * L @ L - np.eye(5))).max())
    res.append(_result("K=3 third slice is 2L^2 - I", err <= 1e-12, f"max err {err:.2e}"))
    s5 = cheb_stack(L, 5).T.data
    err = float(np.abs(s5 - dense_cheb_loop(L, 5)).max())
    res.append(_result("K=5 matches loop recurrence", err <= 1e-12, f"max err {err:.2e}"))
    E = NodeEmbedding(6, 3, rng)
    A = adaptive_adjacency(E).data
    err = float(np.abs(A.sum(axis=1) - 1).max())
    res.append(_result("adaptive adjacency row-stochastic", err <= 1e-12, f"max err {err:.2e}"))
    return res


def suite_agc(seed=0, cases=50):
    rng = np.random.default_rng(seed)
    worst = 0.0
    backends = kernels.available_backends()
    for _ in range(cases):
        n, d, K = rng.integers(1, 7), rng.integers(1, 5), rng.integers(1, 4)
        ci, co = rng.integers(1, 6), rng.integers(1, 6)
        emb = NodeEmbedding(n, d, rng)
        stk = cheb_stack(adaptive_adjacency(emb).data, K)
        w = AgcWeights(d, K, ci, co, rng)
        X = rng.normal(size=(n, ci))
        ref = agc_dense_loop(X, stk.T.data, emb.E.data, w.W.data, w.b.data)
        for name in backends:
            prev = kernels.set_backend(name)
            try:
                got = agc_forward(X, stk, emb, w).data
            finally:
                kernels.set_backend(prev)
            worst = max(worst, float(np.abs(got - ref).max()))
    return [_result(f"AGC vs dense loop ({cases} shapes, {'+'.join(backends)})", worst <= 1e-10,
                    f"max err {worst:.2e}")]


def suite_gcrn(seed=0):
    rng = np.random.default_rng(seed)
    B, N, ci, co, K, d = 2, 3, 2, 4, 2, 3
    emb = NodeEmbedding(N, d, rng)
    stk = cheb_stack(adaptive_adjacency(emb), K)
    p = GcrnCellParams(d, K, ci, co, rng)
    x = rng.normal(size=(B, N, ci))
    h = rng.normal(size=(B, N, co))
    got = gcrn_cell_step(Tensor(x), Tensor(h), p, stk, emb).h.data
    worst = 0.0
    for b in range(B):
        ref = gcrn_cell_loop(x[b], h[b], p.w_z.W.data, p.w_r.W.data, p.w_h.W.data,
                             p.b_z.data, p.b_r.data, p.b_h.data, stk.T.data, emb.E.data)
        worst = max(worst, float(np.abs(got[b] - ref).max()))
    return [_result("GCRN cell vs dense loop", worst <= 1e-10, f"max err {worst:.2e}")]


def suite_attention(seed=0, cases=20):
    rng = np.random.default_rng(seed)
    res = []
    worst = 0.0
    for _ in range(cases):
        B, N, T = rng.integers(1, 3), rng.integers(1, 4), rng.integers(2, 9)
        heads = int(rng.integers(1, 3))
        C = heads * int(rng.integers(1, 4))
        p = TransformerBlockParams(C, heads, 2 * C, rng)
        H = Tensor(rng.normal(size=(B, N, T, C)))
        sel = InformerSelection(u=T, U=T, seed=int(rng.integers(1 << 30)))
        a = informer_block(H, p, sel).data
        b = transformer_block(H, p).data
        worst = max(worst, float(np.abs(a - b).max()))
    res.append(_result(f"Informer(u=T,U=T) == Transformer ({cases} cases)", worst < 1e-10,
                       f"max err {worst:.2e}"))

    C, T = 4, 6
    p = AttentionParams(C, 1, rng)
    p.W_q.data[:] = 0.0
    p.W_k.data[:] = 0.0
    p.W_v.data[:] = np.eye(C)
    p.W_o.data[:] = np.eye(C)
    H = rng.normal(size=(2, 3, T, C))
    out = multi_head_self_attention(Tensor(H), p).data
    err = float(np.abs(out - H.mean(axis=2, keepdims=True)).max())
    res.append(_result("MHSA with zero Q/K gives time means", err <= 1e-12, f"max err {err:.2e}"))

    p = AttentionParams(C, 2, rng)
    H = rng.normal(size=(1, 1, T, C))
    sel = InformerSelection(u=T, U=T)
    err = float(np.abs(prob_sparse_attention(Tensor(H), p, sel).data
                       - multi_head_self_attention(Tensor(H), p).data).max())
    res.append(_result("ProbSparse(u=T) == MHSA", err < 1e-10, f"max err {err:.2e}"))

    Q, K, V = rng.normal(size=(5, 3)), rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    from .attention import scaled_dot_attention
    err = float(np.abs(scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V)).data - attention_loop(Q, K, V)).max())
    res.append(_result("scaled dot attention vs loop", err <= 1e-12, f"max err {err:.2e}"))

    Q, K = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    err = float(np.abs(query_dilution(Q, K, InformerSelection(U=8)) - dilution_loop(Q, K)).max())
    res.append(_result("query dilution (U=T) vs enumeration", err <= 1e-12, f"max err {err:.2e}"))

    pe = positional_encoding(4, 6)
    ok = np.allclose(pe[0, 0::2], 0) and np.allclose(pe[0, 1::2], 1) and abs(pe[1, 0] - math.sin(1)) < 1e-15
    res.append(_result("positional encoding anchors", ok, "t=0 and sin(1)"))
    return res


def toy_config(variant, seed=0):
    return ModelConfig(num_nodes=4, in_channels=1, hidden=8, input_steps=3, output_steps=3, K=2,
                       embed_dim=2, layers=2, variant=variant, heads=2, d_ff=32, seed=seed)


def toy_gradcheck(variant, seed=0, rtol=1e-4, step=1e-5):
    """End-to-end gradient check of the toy model for one attention variant."""
    model = ASTGCRN(toy_config(variant, seed))
    rng = np.random.default_rng(seed + 1)
    X = rng.normal(size=(2, 3, 4, 1))
    Y = rng.normal(size=(2, 3, 4, 1))
    if model.selection is not None:
        model.forward(X)
        model.selection.fixed = model.selection.last_indices
    return finite_diff_check(lambda: l1_loss(model.forward(X), Y), model.parameters(), step=step, rtol=rtol)


def suite_gradients(seed=0):
    res = []
    for variant in ("none", "mhsa", "transformer", "informer"):
        t0 = time.perf_counter()
        rep = toy_gradcheck(variant, seed)
        dt = time.perf_counter() - t0
        res.append(_result(f"finite differences, variant={variant}", rep.passed,
                           f"max rel err {rep.max_rel_error:.2e} in {dt:.1f}s"))
    return res


SUITES = {
    "chebyshev": suite_chebyshev,
    "agc": suite_agc,
    "gcrn": suite_gcrn,
    "attention": suite_attention,
    "gradients": suite_gradients,
}


def run_suites(names):
    out = []
    for name in names:
        for r in SUITES[name]():
            out.append(dict(r, suite=name))
    return out
