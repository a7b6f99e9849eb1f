import numpy as np
import pytest

from astgcrn.errors import ConfigurationError, DimensionError
from astgcrn.gcrn import GcrnCellParams, gcrn_cell_step, gcrn_encode, zero_state
from astgcrn.gradcheck import finite_diff_check
from astgcrn.graph import NodeEmbedding, adaptive_adjacency, cheb_stack
from astgcrn.oracles import gcrn_cell_loop
from astgcrn.tensor import Tensor, mean_all, sigmoid, tanh


def setup(seed=0, N=3, ci=2, co=4, K=2, d=3, layers=1):
    rng = np.random.default_rng(seed)
    emb = NodeEmbedding(N, d, rng)
    stk = cheb_stack(adaptive_adjacency(emb), K)
    params = [GcrnCellParams(d, K, ci if i == 0 else co, co, rng, name=f"l{i}") for i in range(layers)]
    return rng, emb, stk, params


def zero_out(params):
    for p in params:
        for q in p.parameters():
            q.data[...] = 0.0


def test_zero_weights_halve_state():
    rng, emb, stk, (p,) = setup()
    zero_out([p])
    H = rng.normal(size=(2, 3, 4))
    out = gcrn_cell_step(Tensor(rng.normal(size=(2, 3, 2))), Tensor(H), p, stk, emb).h.data
    np.testing.assert_array_equal(out, 0.5 * H)


def test_gates_strictly_inside_unit_interval():
    rng, emb, stk, (p,) = setup(seed=2)
    seen = []

    def hook(z):
        seen.append(z.data)
        return z

    gcrn_cell_step(Tensor(3 * rng.normal(size=(2, 3, 2))), Tensor(rng.normal(size=(2, 3, 4))), p, stk, emb,
                   gate_hook=hook)
    z = seen[0]
    assert ((z > 0) & (z < 1)).all()


@pytest.mark.parametrize("seed", range(3))
def test_dense_loop_oracle(seed):
    rng, emb, stk, (p,) = setup(seed=seed)
    x, h = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 4))
    got = gcrn_cell_step(Tensor(x), Tensor(h), p, stk, emb).h.data
    for b in range(2):
        ref = gcrn_cell_loop(x[b], h[b], p.w_z.W.data, p.w_r.W.data, p.w_h.W.data,
                             p.b_z.data, p.b_r.data, p.b_h.data, stk.T.data, emb.E.data)
        np.testing.assert_allclose(got[b], ref, rtol=0, atol=1e-10)


def test_single_step_encode_matches_cell():
    rng, emb, stk, (p,) = setup()
    X = rng.normal(size=(2, 1, 3, 2))
    enc = gcrn_encode(Tensor(X), [p], stk, emb).data
    step = gcrn_cell_step(Tensor(X[:, 0]), zero_state(2, 3, 4), p, stk, emb).h.data
    np.testing.assert_array_equal(enc[:, :, 0], step)


def test_zero_parameters_give_zero_states():
    rng, emb, stk, params = setup(layers=2)
    zero_out(params)
    out = gcrn_encode(Tensor(rng.normal(size=(2, 5, 3, 2))), params, stk, emb).data
    assert out.shape == (2, 3, 5, 4)
    np.testing.assert_array_equal(out, 0.0)


def test_replay_oracle():
    rng, emb, stk, params = setup(layers=2)
    X = rng.normal(size=(2, 4, 3, 2))
    H, per_layer = gcrn_encode(Tensor(X), params, stk, emb, return_all_layers=True)
    seq = [Tensor(X[:, t]) for t in range(4)]
    for li, p in enumerate(params):
        state = zero_state(2, 3, 4)
        outs = []
        for t, x_t in enumerate(seq):
            state = gcrn_cell_step(x_t, state, p, stk, emb)
            np.testing.assert_allclose(per_layer[li][t].data, state.h.data, rtol=0, atol=1e-14)
            outs.append(state.h)
        seq = outs
    np.testing.assert_allclose(H.data, np.stack([s.data for s in seq], axis=2), atol=1e-14)


def test_clamped_update_gate_carries_state():
    rng, emb, stk, (p,) = setup(seed=4)
    h = rng.normal(size=(2, 3, 4))
    out = gcrn_cell_step(Tensor(rng.normal(size=(2, 3, 2))), Tensor(h), p, stk, emb,
                         gate_hook=lambda z: Tensor(np.ones(z.shape))).h.data
    np.testing.assert_array_equal(out, h)


def test_deterministic():
    outs = []
    for _ in range(2):
        rng, emb, stk, params = setup(seed=9, layers=2)
        outs.append(gcrn_encode(Tensor(rng.normal(size=(2, 4, 3, 2))), params, stk, emb).data)
    assert outs[0].tobytes() == outs[1].tobytes()


def test_causality():
    rng, emb, stk, params = setup(layers=2)
    X = rng.normal(size=(1, 6, 3, 2))
    base = gcrn_encode(Tensor(X), params, stk, emb).data
    X2 = X.copy()
    X2[:, 3] += 5.0
    moved = gcrn_encode(Tensor(X2), params, stk, emb).data
    np.testing.assert_array_equal(base[:, :, :3], moved[:, :, :3])
    assert not np.allclose(base[:, :, 3:], moved[:, :, 3:])


def test_shape_errors():
    rng, emb, stk, params = setup(layers=1)
    with pytest.raises(ConfigurationError):
        gcrn_encode(Tensor(np.zeros((1, 2, 3, 2))), [], stk, emb)
    with pytest.raises(DimensionError):
        gcrn_cell_step(Tensor(np.zeros((1, 3, 5))), zero_state(1, 3, 4), params[0], stk, emb)


def test_three_step_unroll_gradients():
    rng, emb, stk_unused, params = setup(seed=5, layers=2, N=3, ci=2, co=3, d=2)
    X = Tensor(rng.normal(size=(2, 3, 3, 2)))

    def loss():
        stk = cheb_stack(adaptive_adjacency(emb), 2)
        return mean_all(tanh(gcrn_encode(X, params, stk, emb)) * sigmoid(gcrn_encode(X, params[:1], stk, emb)))

    all_params = [emb.E] + [q for p in params for q in p.parameters()]
    rep = finite_diff_check(loss, all_params)
    assert rep.passed, rep.summary()
