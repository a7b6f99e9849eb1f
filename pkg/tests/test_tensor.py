import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from astgcrn import tensor as tn
from astgcrn.errors import ConfigurationError, ContractError, DimensionError, NumericError, OracleError
from astgcrn.gradcheck import finite_diff_check
from astgcrn.tensor import Parameter, Tensor, backward


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


class TestMatmul:
    def test_identity(self):
        out = tn.matmul(T([[1, 2], [3, 4]]), T([[1, 0], [0, 1]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_hand_product(self):
        out = tn.matmul(T([[1, 2], [3, 4]]), T([[5, 6], [7, 8]]))
        np.testing.assert_array_equal(out.data, [[19, 22], [43, 50]])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
            tn.matmul(T(np.ones((2, 3))), T(np.ones((4, 2))))

    def test_batched(self, rng):
        a, b = rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 4, 5))
        np.testing.assert_allclose(tn.matmul(T(a), T(b)).data, a @ b)

    def test_batch_mismatch(self):
        with pytest.raises(DimensionError):
            tn.matmul(T(np.ones((3, 2, 4))), T(np.ones((2, 4, 5))))

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10**6))
    def test_associativity_on_integers(self, m, k, n, p, seed):
        r = np.random.default_rng(seed)
        A, B, C = (T(r.integers(-5, 6, size=s).astype(float)) for s in ((m, k), (k, n), (n, p)))
        left = tn.matmul(tn.matmul(A, B), C).data
        right = tn.matmul(A, tn.matmul(B, C)).data
        np.testing.assert_array_equal(left, right)


class TestSoftmax:
    def test_uniform_on_zeros(self):
        np.testing.assert_allclose(tn.softmax_rows(T([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_two_values(self):
        e = math.e
        out = tn.softmax_rows(T([1.0, 0.0])).data
        np.testing.assert_allclose(out, [e / (e + 1), 1 / (e + 1)], atol=1e-15)
        np.testing.assert_allclose(out, [0.73106, 0.26894], atol=1e-5)

    def test_stable_for_large_logits(self):
        np.testing.assert_array_equal(tn.softmax_rows(T([1000.0, 0.0])).data, [1.0, 0.0])

    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)),
                  elements=st.floats(-50, 50, allow_nan=False)))
    def test_rows_are_distributions(self, x):
        y = tn.softmax_rows(T(x)).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


class TestElementwise:
    def test_values(self):
        assert tn.elementwise("sigmoid", T(0.0)).item() == 0.5
        assert tn.elementwise("tanh", T(0.0)).item() == 0.0
        np.testing.assert_array_equal(tn.elementwise("relu", T([-3.0, 3.0])).data, [0.0, 3.0])

    def test_unknown_tag(self):
        with pytest.raises(ConfigurationError):
            tn.elementwise("gelu", T(1.0))

    def test_sigmoid_extremes_finite(self):
        y = tn.sigmoid(T([-800.0, 800.0])).data
        np.testing.assert_array_equal(y, [0.0, 1.0])


class TestLayerNorm:
    def _ln(self, x, gain=None, bias=None, eps=1e-5):
        c = len(x[-1]) if np.ndim(x) > 1 else len(x)
        g = Parameter(np.ones(c) if gain is None else gain)
        b = Parameter(np.zeros(c) if bias is None else bias)
        return tn.layer_norm(T(x), g, b, eps).data

    def test_constant_row(self):
        np.testing.assert_array_equal(self._ln([5.0, 5.0, 5.0]), [0.0, 0.0, 0.0])

    def test_two_values(self):
        np.testing.assert_allclose(self._ln([1.0, 3.0], eps=1e-14), [-1.0, 1.0], atol=1e-12)

    def test_zero_gain_gives_bias(self, rng):
        bias = np.array([0.5, -1.0, 2.0])
        out = self._ln(rng.normal(size=(4, 3)), gain=np.zeros(3), bias=bias)
        np.testing.assert_array_equal(out, np.broadcast_to(bias, (4, 3)))

    def test_moments(self, rng):
        out = self._ln(rng.normal(3.0, 4.0, size=(6, 16)))
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-5)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        p = Parameter(rng.normal(size=(2, 3, 4)))
        backward(p.sum())
        np.testing.assert_array_equal(p.grad, np.ones((2, 3, 4)))

    def test_square(self):
        p = Parameter([2.0, 3.0])
        backward((p * p).sum())
        np.testing.assert_array_equal(p.grad, [4.0, 6.0])

    def test_accumulates_and_zeroes(self):
        p = Parameter([2.0, 3.0])
        backward((p * p).sum())
        backward((p * p).sum())
        np.testing.assert_array_equal(p.grad, [8.0, 12.0])
        p.zero_grad()
        np.testing.assert_array_equal(p.grad, [0.0, 0.0])
        assert p.grad.shape == p.shape

    def test_column_sums(self, rng):
        A = rng.integers(-4, 5, size=(5, 3)).astype(float)
        x = Parameter(rng.normal(size=(3, 1)))
        backward(tn.matmul(T(A), x).sum())
        np.testing.assert_allclose(x.grad[:, 0], A.sum(axis=0), rtol=0, atol=1e-12)

    def test_non_scalar_root(self):
        p = Parameter(np.ones(3))
        with pytest.raises(ContractError):
            backward(p * 2.0)

    def test_shared_subexpression(self):
        p = Parameter([1.5])
        y = p * p
        backward((y * y + y).sum())  # p^4 + p^2
        np.testing.assert_allclose(p.grad, [4 * 1.5**3 + 2 * 1.5])


def test_non_finite_values_are_rejected():
    with pytest.raises(NumericError):
        Tensor(np.array([1.0, np.nan]))
    with np.errstate(over="ignore"), pytest.raises(NumericError):
        tn.mul(T([1e300]), T([1e300]))


def test_rank_limit():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((1, 1, 1, 1, 1)))


def test_broadcast_limited_to_trailing_axes():
    tn.add(T(np.ones((2, 3))), T(np.ones(3)))
    with pytest.raises(DimensionError):
        tn.add(T(np.ones((2, 3))), T(np.ones(2)))


class TestFiniteDiff:
    def test_quadratic_is_exact(self, rng):
        A = rng.normal(size=(4, 4))
        A = A @ A.T
        p = Parameter(rng.normal(size=(4, 1)))
        rep = finite_diff_check(lambda: tn.matmul(tn.transpose(p, (1, 0)), tn.matmul(T(A), p)).sum(), [p])
        assert rep.passed
        assert rep.max_rel_error < 1e-8

    def test_step_must_be_positive(self):
        p = Parameter([1.0])
        with pytest.raises(ConfigurationError):
            finite_diff_check(lambda: (p * p).sum(), [p], step=0.0)

    def test_nondeterministic_loss_detected(self):
        p = Parameter([1.0])
        counter = iter(range(100))
        with pytest.raises(OracleError):
            finite_diff_check(lambda: (p * float(next(counter))).sum(), [p])

    def test_flags_wrong_gradient(self):
        p = Parameter([1.0, 2.0])

        def bad_square(x):
            return Tensor(x.data**2, (x,), lambda g: (g * 3.0 * x.data,), "bad")

        rep = finite_diff_check(lambda: bad_square(p).sum(), [p])
        assert not rep.passed
        assert rep.params[0].failures == [0, 1]

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**6))
    def test_composite_ops(self, seed):
        r = np.random.default_rng(seed)
        a = Parameter(r.normal(size=(2, 3, 4)), "a")
        w = Parameter(r.normal(size=(4, 5)), "w")
        g = Parameter(r.normal(size=5) + 1.0, "g")
        b = Parameter(r.normal(size=5), "b")
        idx = np.argsort(r.normal(size=(2, 3)), axis=-1)[..., :2]

        def loss():
            h = tn.layer_norm(tn.matmul(a, w), g, b)
            s = tn.softmax_rows(h)
            z = tn.concat([tn.sigmoid(h), tn.tanh(s)], axis=-1)
            m = tn.repeat_axis(tn.mean_axis(z, 1, keepdims=True), 1, 3)
            picked = tn.take_rows(z, idx)
            mixed = tn.scatter_rows(m, picked * 2.0, idx)
            return tn.mean_all(tn.reshape(tn.transpose(mixed, (2, 0, 1)), (10, 6)) * 1.5 - 0.25)

        rep = finite_diff_check(loss, [a, w, g, b])
        assert rep.passed, rep.summary()
