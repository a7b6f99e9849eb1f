"""Temporal attention over encoder states: MHSA, Transformer and Informer blocks.

All blocks take ``H`` of shape (B, N, T, C) and attend along T independently
for every (batch, node) slice. Heads are laid out as (B*N, h, T, d) so no
intermediate exceeds rank 4.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .tensor import (
    Parameter,
    Tensor,
    add,
    layer_norm,
    matmul,
    mean_axis,
    relu,
    repeat_axis,
    scatter_rows,
    softmax_rows,
    take_rows,
    transpose,
)


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class AttentionParams:
    def __init__(self, c_out, heads, rng, d=None, d_v=None, dtype=np.float64, name="attn"):
        if heads < 1:
            raise ConfigurationError(f"heads must be >= 1, got {heads}")
        if d is None or d_v is None:
            if c_out % heads:
                raise ConfigurationError(f"C_out={c_out} is not divisible by heads={heads}")
        d = c_out // heads if d is None else d
        d_v = d if d_v is None else d_v
        self.heads, self.d, self.d_v = heads, d, d_v
        self.W_q = Parameter(_uniform(rng, c_out, (c_out, heads * d), dtype), f"{name}.W_q")
        self.W_k = Parameter(_uniform(rng, c_out, (c_out, heads * d), dtype), f"{name}.W_k")
        self.W_v = Parameter(_uniform(rng, c_out, (c_out, heads * d_v), dtype), f"{name}.W_v")
        self.W_o = Parameter(_uniform(rng, heads * d_v, (heads * d_v, c_out), dtype), f"{name}.W_o")

    def parameters(self):
        return [self.W_q, self.W_k, self.W_v, self.W_o]


class TransformerBlockParams:
    def __init__(self, c_out, heads, d_ff, rng, dtype=np.float64, name="block"):
        self.attention = AttentionParams(c_out, heads, rng, dtype=dtype, name=f"{name}.attn")
        self.ffn1_W = Parameter(_uniform(rng, c_out, (c_out, d_ff), dtype), f"{name}.ffn1.W")
        self.ffn1_b = Parameter(_uniform(rng, c_out, (d_ff,), dtype), f"{name}.ffn1.b")
        self.ffn2_W = Parameter(_uniform(rng, d_ff, (d_ff, c_out), dtype), f"{name}.ffn2.W")
        self.ffn2_b = Parameter(_uniform(rng, d_ff, (c_out,), dtype), f"{name}.ffn2.b")
        self.ln1_gain = Parameter(np.ones(c_out, dtype=dtype), f"{name}.ln1.gain")
        self.ln1_bias = Parameter(np.zeros(c_out, dtype=dtype), f"{name}.ln1.bias")
        self.ln2_gain = Parameter(np.ones(c_out, dtype=dtype), f"{name}.ln2.gain")
        self.ln2_bias = Parameter(np.zeros(c_out, dtype=dtype), f"{name}.ln2.bias")

    def parameters(self):
        return self.attention.parameters() + [
            self.ffn1_W, self.ffn1_b, self.ffn2_W, self.ffn2_b,
            self.ln1_gain, self.ln1_bias, self.ln2_gain, self.ln2_bias,
        ]


@dataclass
class InformerSelection:
    """How many queries stay active (``u``) and how many keys score them (``U``).

    Leaving ``u``/``U`` as None derives them from the sequence length:
    u = ceil(c ln T), U = ceil(T ln T), both clamped to [1, T].
    ``fixed`` pins the selected indices (shape (B*N, h, u)); the last
    computed selection is kept in ``last_indices``.
    """

    c: float = 1.0
    u: int | None = None
    U: int | None = None
    seed: int = 0
    fixed: np.ndarray | None = None
    last_indices: np.ndarray | None = None

    def __post_init__(self):
        if self.u is not None and self.u < 1:
            raise ConfigurationError(f"u must be >= 1, got {self.u}")
        if self.U is not None and self.U < 1:
            raise ConfigurationError(f"sample count U must be >= 1, got {self.U}")

    def top_u(self, T):
        if self.u is not None:
            if self.u > T:
                raise ConfigurationError(f"u={self.u} exceeds sequence length {T}")
            return self.u
        return int(min(max(math.ceil(self.c * math.log(T)), 1), T)) if T > 1 else 1

    def sample_count(self, T):
        if self.U is not None:
            if self.U > T:
                raise ConfigurationError(f"U={self.U} exceeds sequence length {T}")
            return self.U
        return int(min(max(math.ceil(T * math.log(T)), 1), T)) if T > 1 else 1


def scaled_dot_attention(Q, K, V, return_weights=False):
    """``softmax(Q K^T / sqrt(d)) V`` for rank-2 or batched operands."""
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query/key widths differ: {Q.shape} vs {K.shape}")
    if K.shape[-2] != V.shape[-2]:
        raise DimensionError(f"key/value lengths differ: {K.shape} vs {V.shape}")
    d = Q.shape[-1]
    axes = tuple(range(K.ndim - 2)) + (K.ndim - 1, K.ndim - 2)
    logits = matmul(Q, transpose(K, axes)) * (1.0 / math.sqrt(d))
    weights = softmax_rows(logits)
    out = matmul(weights, V)
    if return_weights:
        return out, weights
    return out


def _heads(H, W, heads, width):
    """(B, N, T, C) @ W -> (B*N, h, T, width)."""
    b, n, t, c = H.shape
    P = matmul(H.reshape(b * n, t, c), W)
    return transpose(P.reshape(b * n, t, heads, width), (0, 2, 1, 3))


def _merge_heads(ctx, W_o, shape):
    b, n, t, _ = shape
    bn, h, _, dv = ctx.shape
    merged = transpose(ctx, (0, 2, 1, 3)).reshape(bn, t, h * dv)
    return matmul(merged, W_o).reshape(b, n, t, W_o.shape[1])


def _check_input(H, p):
    if H.ndim != 4:
        raise DimensionError(f"attention input must be (B, N, T, C), got {H.shape}")
    if H.shape[-1] != p.W_q.shape[0]:
        raise DimensionError(f"attention channels {H.shape[-1]} != projection input {p.W_q.shape[0]}")


def multi_head_self_attention(H, p, weights_hook=None):
    _check_input(H, p)
    Q = _heads(H, p.W_q, p.heads, p.d)
    K = _heads(H, p.W_k, p.heads, p.d)
    V = _heads(H, p.W_v, p.heads, p.d_v)
    ctx, weights = scaled_dot_attention(Q, K, V, return_weights=True)
    if weights_hook is not None:
        weights_hook(weights.data)
    return _merge_heads(ctx, p.W_o, H.shape)


def positional_encoding(T, c_out, base=1000.0, dtype=np.float64):
    """Fixed sin/cos table of shape (T, C_out); channel pair (2c, 2c+1) shares a frequency."""
    if c_out < 1:
        raise ConfigurationError(f"C_out must be >= 1, got {c_out}")
    pe = np.zeros((T, c_out), dtype=dtype)
    t = np.arange(T, dtype=np.float64)[:, None]
    pair = np.arange(0, c_out, 2, dtype=np.float64)
    angle = t / np.power(base, pair / c_out)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : c_out // 2])
    return pe


def query_dilution(Q, K, sel, rng=None):
    """Max-minus-mean of each query's scaled logits over a key sample.

    Works on plain arrays (..., T, d); unsampled keys are left out of both
    the max and the mean. Returns an array of shape (..., T).
    """
    Q = np.asarray(getattr(Q, "data", Q))
    K = np.asarray(getattr(K, "data", K))
    if Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"query/key widths differ: {Q.shape} vs {K.shape}")
    T = K.shape[-2]
    U = sel.sample_count(T)
    if U < T:
        rng = np.random.default_rng(sel.seed) if rng is None else rng
        keys = np.sort(rng.choice(T, size=U, replace=False))
        K = K[..., keys, :]
    logits = (Q @ np.swapaxes(K, -1, -2)) / math.sqrt(Q.shape[-1])
    return logits.max(axis=-1) - logits.mean(axis=-1)


def select_queries(M, u):
    """Indices of the ``u`` largest scores per row, ties to the lower index, sorted ascending."""
    order = np.argsort(-M, axis=-1, kind="stable")[..., :u]
    return np.sort(order, axis=-1)


def prob_sparse_attention(H, p, sel):
    _check_input(H, p)
    T = H.shape[2]
    u = sel.top_u(T)
    Q = _heads(H, p.W_q, p.heads, p.d)
    K = _heads(H, p.W_k, p.heads, p.d)
    V = _heads(H, p.W_v, p.heads, p.d_v)
    if sel.fixed is not None:
        idx = np.asarray(sel.fixed)
        if idx.shape != Q.shape[:2] + (u,):
            raise DimensionError(f"fixed selection {idx.shape} != expected {Q.shape[:2] + (u,)}")
    else:
        idx = select_queries(query_dilution(Q.data, K.data, sel), u)
    sel.last_indices = idx
    active = scaled_dot_attention(take_rows(Q, idx), K, V)
    lazy = repeat_axis(mean_axis(V, -2, keepdims=True), -2, T)
    ctx = scatter_rows(lazy, active, idx)
    return _merge_heads(ctx, p.W_o, H.shape)


def _ffn(x, p):
    return add(matmul(relu(add(matmul(x, p.ffn1_W), p.ffn1_b)), p.ffn2_W), p.ffn2_b)


def transformer_block(H, p, pe_base=1000.0, attention=None, eps=1e-5):
    """Positional encoding, then two residual + layer-norm sub-layers (attention, FFN)."""
    if H.ndim != 4:
        raise DimensionError(f"transformer input must be (B, N, T, C), got {H.shape}")
    T, C = H.shape[2], H.shape[3]
    Hp = H + Tensor(positional_encoding(T, C, pe_base, dtype=H.dtype))
    attn = attention if attention is not None else (lambda x: multi_head_self_attention(x, p.attention))
    x = layer_norm(Hp + attn(Hp), p.ln1_gain, p.ln1_bias, eps)
    return layer_norm(x + _ffn(x, p), p.ln2_gain, p.ln2_bias, eps)


def informer_block(H, p, sel, pe_base=1000.0, eps=1e-5):
    return transformer_block(
        H, p, pe_base=pe_base, attention=lambda x: prob_sparse_attention(x, p.attention, sel), eps=eps
    )
