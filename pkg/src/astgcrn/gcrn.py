"""GRU cell whose gate transforms are adaptive graph convolutions."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .graph import AgcWeights, graph_conv
from .tensor import Parameter, Tensor, concat, matmul, sigmoid, stack, tanh, transpose


class GcrnCellParams:
    """Weights of one recurrent layer: three gate pools plus their bias pools."""

    def __init__(self, emb_dim, K, c_in, c_out, rng, dtype=np.float64, name="gcrn"):
        self.c_in = c_in
        self.c_out = c_out
        cat = c_in + c_out
        self.w_z = AgcWeights(emb_dim, K, cat, c_out, rng, bias=False, dtype=dtype, name=f"{name}.w_z")
        self.w_r = AgcWeights(emb_dim, K, cat, c_out, rng, bias=False, dtype=dtype, name=f"{name}.w_r")
        self.w_h = AgcWeights(emb_dim, K, cat, c_out, rng, bias=False, dtype=dtype, name=f"{name}.w_h")
        bound = 1.0 / np.sqrt(K * cat)
        self.b_z = Parameter(rng.uniform(-bound, bound, (emb_dim, c_out)).astype(dtype), f"{name}.b_z")
        self.b_r = Parameter(rng.uniform(-bound, bound, (emb_dim, c_out)).astype(dtype), f"{name}.b_r")
        self.b_h = Parameter(rng.uniform(-bound, bound, (emb_dim, c_out)).astype(dtype), f"{name}.b_h")

    def parameters(self):
        return [self.w_z.W, self.w_r.W, self.w_h.W, self.b_z, self.b_r, self.b_h]


@dataclass
class GcrnState:
    h: Tensor


def zero_state(batch, num_nodes, c_out, dtype=np.float64):
    return GcrnState(Tensor(np.zeros((batch, num_nodes, c_out), dtype=dtype)))


def step_constants(params, E):
    """Per-sequence terms reused at every step: fused z/r weights and node biases."""
    W_zr = concat([params.w_z.W, params.w_r.W], axis=-1)
    b_zr = matmul(E, concat([params.b_z, params.b_r], axis=-1))
    return W_zr, b_zr, matmul(E, params.b_h)


def gcrn_cell_step(x_t, h_prev, params, stk, emb, gate_hook=None, constants=None):
    """One recurrent update.

    The z and r gates keep separate weights but share one convolution call
    (their pools are concatenated on the output axis). ``gate_hook``
    (testing) receives the update gate and returns the tensor used in its
    place. ``constants`` takes a precomputed :func:`step_constants` result.
    """
    E = emb.E if hasattr(emb, "E") else emb
    h = h_prev.h if isinstance(h_prev, GcrnState) else h_prev
    if x_t.ndim != 3 or h.ndim != 3 or x_t.shape[:2] != h.shape[:2]:
        raise DimensionError(f"cell step: input {x_t.shape} and state {h.shape} are inconsistent")
    if x_t.shape[2] != params.c_in or h.shape[2] != params.c_out:
        raise DimensionError(
            f"cell step: channels ({x_t.shape[2]}, {h.shape[2]}) != configured ({params.c_in}, {params.c_out})"
        )
    W_zr, b_zr, b_h = constants if constants is not None else step_constants(params, E)
    co = params.c_out

    xh = concat([x_t, h], axis=-1)
    zr = sigmoid(graph_conv(xh, stk, E, W_zr) + b_zr)
    z, r = zr[..., :co], zr[..., co:]
    if gate_hook is not None:
        z = gate_hook(z)
    cand = tanh(graph_conv(concat([x_t, r * h], axis=-1), stk, E, params.w_h.W) + b_h)
    return GcrnState(z * h + (1.0 - z) * cand)


def gcrn_encode(X, layers, stk, emb, return_all_layers=False):
    """Run the stacked recurrence over time; returns H_o of shape (B, N, T', C_out)."""
    if not layers:
        raise ConfigurationError("gcrn_encode needs at least one layer")
    if X.ndim != 4:
        raise DimensionError(f"encoder input must be (B, T', N, C), got {X.shape}")
    E = emb.E if hasattr(emb, "E") else emb
    bsz, steps, nn, _ = X.shape
    seq = [X[:, t] for t in range(steps)]
    per_layer = []
    for params in layers:
        consts = step_constants(params, E)
        state = zero_state(bsz, nn, params.c_out, dtype=X.dtype)
        outs = []
        for x_t in seq:
            state = gcrn_cell_step(x_t, state, params, stk, E, constants=consts)
            outs.append(state.h)
        seq = outs
        per_layer.append(outs)
    H = transpose(stack(seq, axis=0), (1, 2, 0, 3))
    if return_all_layers:
        return H, per_layer
    return H
