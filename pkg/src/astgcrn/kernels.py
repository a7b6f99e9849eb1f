"""Fused adaptive-graph-convolution kernels.

Shapes used throughout::

    x  (B, N, Ci)      graph signal
    s  (K, N, N)       Chebyshev stack
    e  (N, D)          node embedding
    w  (D, K, Ci, Co)  weight pool
    xg (B, N, K, Ci)   stack-propagated signal, saved for backward

The per-node kernel ``e[n] @ w`` is formed one node at a time (numba) or
contracted after the pool product (numpy); the full N x K x Ci x Co tensor
is never held in memory.

Two interchangeable backends exist: numba ``@njit`` loops and a pure-numpy
path. ``ASTGCRN_NUMBA=0`` selects numpy; so does a missing numba install.
"""
import numpy as np

from .runtime import numba_requested

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


# ---------------------------------------------------------------- numpy path

def _propagate_np(x, s):
    # (K,N,N) @ (B,1,N,Ci) -> (B,K,N,Ci) -> (B,N,K,Ci)
    xg = np.matmul(s[None], x[:, None])
    return np.ascontiguousarray(xg.transpose(0, 2, 1, 3))


def agc_forward_np(x, s, e, w):
    b, n, _ = x.shape
    d, k, ci, co = w.shape
    xg = _propagate_np(x, s)
    # pool product: (B*N, K*Ci) @ (K*Ci, D*Co) -> (B, N, D, Co)
    wp = w.reshape(d, k * ci, co).transpose(1, 0, 2).reshape(k * ci, d * co)
    pooled = (xg.reshape(b * n, k * ci) @ wp).reshape(b, n, d, co)
    out = np.einsum("bndo,nd->bno", pooled, e)
    return out, xg


def agc_backward_np(x, s, e, w, xg, gout):
    b, n, _ = x.shape
    d, k, ci, co = w.shape
    wp = w.reshape(d, k * ci, co).transpose(1, 0, 2).reshape(k * ci, d * co)
    xg2 = xg.reshape(b * n, k * ci)
    pooled = (xg2 @ wp).reshape(b, n, d, co)

    ge = np.einsum("bno,bndo->nd", gout, pooled)
    gpooled = (gout[:, :, None, :] * e[None, :, :, None]).reshape(b * n, d * co)
    gwp = xg2.T @ gpooled
    gw = gwp.reshape(k * ci, d, co).transpose(1, 0, 2).reshape(d, k, ci, co)
    gxg = (gpooled @ wp.T).reshape(b, n, k, ci)

    gxg_t = gxg.transpose(0, 2, 1, 3)  # (B,K,N,Ci)
    gx = np.matmul(np.swapaxes(s, 1, 2)[None], gxg_t).sum(axis=1)
    gs = np.matmul(gxg_t, np.swapaxes(x, 1, 2)[:, None]).sum(axis=0)
    return gx, gs, ge, gw


# ---------------------------------------------------------------- numba path

# reassociation lets reductions vectorize; NaN/Inf semantics are kept
_FASTMATH = {"reassoc", "contract", "nsz"}

if numba is not None:

    @numba.njit(cache=True, fastmath=_FASTMATH)
    def _agc_forward_nb(x, s, e, w):
        bsz, nn, ci = x.shape
        d, k, _, co = w.shape
        xg = np.zeros((bsz, nn, k, ci), dtype=x.dtype)
        for b in range(bsz):
            for kk in range(k):
                for n in range(nn):
                    for m in range(nn):
                        a = s[kk, n, m]
                        for i in range(ci):
                            xg[b, n, kk, i] += a * x[b, m, i]
        out = np.zeros((bsz, nn, co), dtype=x.dtype)
        psi = np.empty((k, ci, co), dtype=x.dtype)
        for n in range(nn):
            psi[:] = 0.0
            for dd in range(d):
                en = e[n, dd]
                for kk in range(k):
                    for i in range(ci):
                        for o in range(co):
                            psi[kk, i, o] += en * w[dd, kk, i, o]
            for b in range(bsz):
                for kk in range(k):
                    for i in range(ci):
                        v = xg[b, n, kk, i]
                        for o in range(co):
                            out[b, n, o] += v * psi[kk, i, o]
        return out, xg

    @numba.njit(cache=True, fastmath=_FASTMATH)
    def _agc_backward_nb(x, s, e, w, xg, gout):
        bsz, nn, ci = x.shape
        d, k, _, co = w.shape
        gx = np.zeros_like(x)
        gs = np.zeros_like(s)
        ge = np.zeros_like(e)
        gw = np.zeros_like(w)
        gxg = np.zeros_like(xg)
        psi = np.empty((k, ci, co), dtype=x.dtype)
        gpsi = np.empty((k, ci, co), dtype=x.dtype)
        for n in range(nn):
            psi[:] = 0.0
            for dd in range(d):
                en = e[n, dd]
                for kk in range(k):
                    for i in range(ci):
                        for o in range(co):
                            psi[kk, i, o] += en * w[dd, kk, i, o]
            gpsi[:] = 0.0
            for b in range(bsz):
                go = gout[b, n]
                for kk in range(k):
                    for i in range(ci):
                        acc = 0.0
                        v = xg[b, n, kk, i]
                        for o in range(co):
                            acc += go[o] * psi[kk, i, o]
                            gpsi[kk, i, o] += v * go[o]
                        gxg[b, n, kk, i] = acc
            for dd in range(d):
                en = e[n, dd]
                acc = 0.0
                for kk in range(k):
                    for i in range(ci):
                        for o in range(co):
                            gp = gpsi[kk, i, o]
                            acc += gp * w[dd, kk, i, o]
                            gw[dd, kk, i, o] += en * gp
                ge[n, dd] = acc
        for b in range(bsz):
            for kk in range(k):
                for n in range(nn):
                    for m in range(nn):
                        a = s[kk, n, m]
                        acc = 0.0
                        for i in range(ci):
                            g = gxg[b, n, kk, i]
                            gx[b, m, i] += a * g
                            acc += g * x[b, m, i]
                        gs[kk, n, m] += acc
        return gx, gs, ge, gw

    def agc_forward_nb(x, s, e, w):
        return _agc_forward_nb(*_contig(x, s, e, w))

    def agc_backward_nb(x, s, e, w, xg, gout):
        return _agc_backward_nb(*_contig(x, s, e, w, xg, gout))

else:  # pragma: no cover
    agc_forward_nb = agc_backward_nb = None


def _contig(*arrays):
    dtype = np.result_type(*arrays)
    return tuple(np.ascontiguousarray(a, dtype=dtype) for a in arrays)


_BACKENDS = {"numpy": (agc_forward_np, agc_backward_np)}
if numba is not None:
    _BACKENDS["numba"] = (agc_forward_nb, agc_backward_nb)

_active = "numba" if (numba is not None and numba_requested()) else "numpy"


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    """Switch kernels at runtime; returns the previous backend name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {available_backends()}")
    prev, _active = _active, name
    return prev


def agc_forward(x, s, e, w):
    return _BACKENDS[_active][0](x, s, e, w)


def agc_backward(x, s, e, w, xg, gout):
    return _BACKENDS[_active][1](x, s, e, w, xg, gout)
