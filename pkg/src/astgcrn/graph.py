"""Adaptive adjacency, Chebyshev stacks and node-factorized graph convolution."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, DimensionError
from .tensor import Parameter, Tensor, as_tensor, matmul, softmax_rows, stack, transpose


class NodeEmbedding:
    """Learnable N x D_e dictionary shared by the adjacency and every kernel."""

    def __init__(self, num_nodes, dim, rng, dtype=np.float64, name="node_embedding"):
        if num_nodes < 1 or dim < 1:
            raise ConfigurationError(f"node embedding needs N >= 1 and D_e >= 1, got {num_nodes}, {dim}")
        bound = 1.0 / np.sqrt(dim)
        self.E = Parameter(rng.uniform(-bound, bound, size=(num_nodes, dim)).astype(dtype), name)

    @classmethod
    def from_array(cls, values, name="node_embedding"):
        obj = cls.__new__(cls)
        obj.E = Parameter(np.asarray(values, dtype=np.float64), name)
        return obj

    @property
    def num_nodes(self):
        return self.E.shape[0]

    @property
    def dim(self):
        return self.E.shape[1]

    def parameters(self):
        return [self.E]


@dataclass
class ChebStack:
    """K x N x N tensor [I, T_1, ..., T_{K-1}] of Chebyshev terms."""

    T: Tensor

    @property
    def K(self):
        return self.T.shape[0]

    @property
    def num_nodes(self):
        return self.T.shape[1]


class AgcWeights:
    """Weight pool W (D_e, K, C_in, C_out) and optional bias pool b (D_e, C_out)."""

    def __init__(self, emb_dim, K, c_in, c_out, rng, bias=True, dtype=np.float64, name="agc"):
        bound = 1.0 / np.sqrt(K * c_in)
        self.W = Parameter(rng.uniform(-bound, bound, size=(emb_dim, K, c_in, c_out)).astype(dtype),
                           f"{name}.W")
        self.b = None
        if bias:
            self.b = Parameter(rng.uniform(-bound, bound, size=(emb_dim, c_out)).astype(dtype), f"{name}.b")

    @classmethod
    def from_arrays(cls, W, b=None, name="agc"):
        obj = cls.__new__(cls)
        obj.W = Parameter(np.asarray(W, dtype=np.float64), f"{name}.W")
        obj.b = None if b is None else Parameter(np.asarray(b, dtype=np.float64), f"{name}.b")
        return obj

    @property
    def K(self):
        return self.W.shape[1]

    @property
    def c_in(self):
        return self.W.shape[2]

    @property
    def c_out(self):
        return self.W.shape[3]

    def parameters(self):
        return [self.W] + ([self.b] if self.b is not None else [])


def adaptive_adjacency(emb):
    """Row-stochastic ``softmax(E @ E.T)``."""
    E = emb.E if isinstance(emb, NodeEmbedding) else emb
    return softmax_rows(matmul(E, transpose(E, (1, 0))))


def cheb_stack(L, K):
    """Stack T_0..T_{K-1} of ``L`` with T_{n+1} = 2 L T_n - T_{n-1}.

    ``L`` is used as given; no spectral rescaling is applied.
    """
    if int(K) != K or K < 1:
        raise ConfigurationError(f"Chebyshev depth K must be an integer >= 1, got {K}")
    L = as_tensor(L)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionError(f"cheb_stack needs a square matrix, got {L.shape}")
    eye = Tensor(np.eye(L.shape[0], dtype=L.dtype))
    terms = [eye]
    if K >= 2:
        terms.append(L)
    for _ in range(2, int(K)):
        terms.append(matmul(L, terms[-1]) * 2.0 - terms[-2])
    return ChebStack(stack(terms, axis=0))


def static_adjacency(A):
    """Row-normalize a fixed nonnegative adjacency (self loops added for empty rows)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"adjacency must be square, got {A.shape}")
    if (A < 0).any():
        raise ConfigurationError("static adjacency must be nonnegative")
    A = A.copy()
    empty = A.sum(axis=1) == 0
    A[empty, empty] = 1.0
    return A / A.sum(axis=1, keepdims=True)


def graph_conv(x, stk, E, W):
    """Differentiable fused convolution: sum_k T[k] x projected by (E[n] @ W)[k] per node."""
    T = stk.T if isinstance(stk, ChebStack) else stk
    xd, sd, ed, wd = x.data, T.data, E.data, W.data
    if xd.ndim != 3:
        raise DimensionError(f"graph_conv expects x of shape (B, N, C_in), got {xd.shape}")
    b, n, ci = xd.shape
    d, k, wci, _ = wd.shape
    if sd.shape != (k, n, n):
        raise DimensionError(f"stack shape {sd.shape} does not match K={k}, N={n}")
    if ed.shape != (n, d):
        raise DimensionError(f"embedding shape {ed.shape} does not match N={n}, D_e={d}")
    if wci != ci:
        raise DimensionError(f"input channels {ci} do not match weight pool {wd.shape}")
    out, xg = kernels.agc_forward(xd, sd, ed, wd)

    def bw(g):
        return kernels.agc_backward(xd, sd, ed, wd, xg, g)

    return Tensor(out, (x, T, E, W), bw, "graph_conv")


def agc_forward(X, stk, emb, w):
    """Adaptive graph convolution of ``X`` (N, C_in) or (B, N, C_in)."""
    X = as_tensor(X)
    E = emb.E if isinstance(emb, NodeEmbedding) else emb
    squeeze = X.ndim == 2
    if squeeze:
        X = X.reshape(1, *X.shape)
    out = graph_conv(X, stk, E, w.W)
    if w.b is not None:
        out = out + matmul(E, w.b)
    if squeeze:
        out = out.reshape(out.shape[1:])
    return out
