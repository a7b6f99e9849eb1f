import math

import numpy as np
import pytest

from astgcrn.data import RawSeries, evaluate_metrics, split_and_window, synth_series
from astgcrn.errors import ConfigurationError, NumericError
from astgcrn.model import ASTGCRN
from astgcrn.oracles import toy_config
from astgcrn.tensor import Parameter, Tensor, add, backward, matmul, mul, transpose
from astgcrn.train import AdamState, Schedule, TrainingDiverged, adam_step, evaluate, fit, metrics_csv


class LinearForecaster:
    """Per-node linear map from the input window to the horizons."""

    dtype = np.float64

    def __init__(self, steps, seed=0, persistence=False):
        rng = np.random.default_rng(seed)
        self.W = Parameter(rng.normal(scale=0.1, size=(steps, steps)), "W")
        self.c = Parameter(np.zeros(steps), "c")
        if persistence:
            self.W.data[:] = 0.0
            self.W.data[-1] = 1.0
        self.calls = 0
        self.poison_after = None

    def parameters(self):
        return [self.W, self.c]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def get_state(self):
        return [p.data.copy() for p in self.parameters()]

    def set_state(self, arrays):
        for p, a in zip(self.parameters(), arrays):
            p.data = a.copy()

    def forward(self, X):
        self.calls += 1
        X = Tensor(np.asarray(X, dtype=np.float64))
        b, t, n, _ = X.shape
        x = transpose(X.reshape(b, t, n), (0, 2, 1)).reshape(b * n, t)
        y = add(matmul(x, self.W), self.c)
        if self.poison_after is not None and self.calls > self.poison_after:
            y = mul(y, Tensor(np.full(y.shape, np.inf)))
        return transpose(y.reshape(b, n, t), (0, 2, 1)).reshape(b, t, n, 1)


def scalar_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def test_scalar_oracle(self):
        p = Parameter([1.0])
        st = AdamState.for_params([p], lr=0.1)
        seen = []
        for _ in range(3):
            p.zero_grad()
            backward((p * p * 0.5).sum())
            seen.append(float(p.grad[0]))
            adam_step([p], st)
        assert p.data[0] < 1.0
        assert p.data[0] == scalar_adam(1.0, seen, 0.1)

    def test_first_step_value(self):
        p = Parameter([1.0])
        backward((p * p * 0.5).sum())
        adam_step([p], AdamState.for_params([p], lr=0.1))
        assert p.data[0] == pytest.approx(1.0 - 0.1 / (1 + 1e-8), abs=1e-15)

    def test_pure_decay_shrinks(self):
        p = Parameter([2.0, -3.0])
        st = AdamState.for_params([p], lr=0.01, weight_decay=0.1)
        for _ in range(5):
            p.zero_grad()
            adam_step([p], st)
        assert (np.abs(p.data) < [2.0, 3.0]).all()
        assert (np.sign(p.data) == [1, -1]).all()

    def test_nan_gradient_names_parameter(self):
        p = Parameter([1.0], "theta")
        p.grad[:] = np.nan
        with pytest.raises(NumericError, match="theta"):
            adam_step([p], AdamState())

    def test_bitwise_determinism(self, rng):
        X = rng.normal(size=(4, 3, 4, 1))
        Y = rng.normal(size=(4, 3, 4, 1))
        finals = []
        for _ in range(2):
            m = ASTGCRN(toy_config("informer", seed=2))
            st = AdamState.for_params(m.parameters())
            from astgcrn.model import l1_loss
            for _ in range(5):
                m.zero_grad()
                backward(l1_loss(m.forward(X), Y))
                adam_step(m.parameters(), st)
            finals.append(b"".join(p.data.tobytes() for p in m.parameters()))
        assert finals[0] == finals[1]


@pytest.fixture(scope="module")
def linear_data():
    return split_and_window(RawSeries(synth_series(nodes=3, steps=300, seed=2)), 6, 6)


class TestFit:
    def test_single_epoch(self, linear_data):
        rep = fit(LinearForecaster(6), linear_data, Schedule(max_epochs=1))
        assert len(rep.epochs) == 1 and rep.stop_reason == "max_epochs"

    @pytest.mark.parametrize("best", [1, 4])
    def test_frozen_validation_stops_at_best_plus_patience(self, linear_data, best):
        hook = lambda epoch, m: (10.0 - min(epoch, best), 1.0, 1.0)  # noqa: E731
        rep = fit(LinearForecaster(6), linear_data, Schedule(max_epochs=100), val_hook=hook)
        assert rep.best_epoch == best
        assert len(rep.epochs) == best + 15
        assert rep.stop_reason == "early_stop"

    def test_zero_lr_leaves_parameters(self, linear_data):
        m = LinearForecaster(6)
        before = m.get_state()
        fit(m, linear_data, Schedule(max_epochs=3, lr=0.0))
        for a, b in zip(before, m.get_state()):
            np.testing.assert_array_equal(a, b)

    def test_best_checkpoint_restored(self, linear_data):
        m = LinearForecaster(6, seed=3)
        rep = fit(m, linear_data, Schedule(max_epochs=40, lr=0.05, patience=5))
        assert rep.best_val_mae == min(r["val_mae"] for r in rep.epochs)
        assert evaluate(m, linear_data, "val")["aggregate"][0] == pytest.approx(rep.best_val_mae, rel=1e-12)

    def test_full_batch_loss_non_increasing(self, linear_data):
        rep = fit(LinearForecaster(6, seed=1), linear_data, Schedule(max_epochs=40, lr=0.002, full_batch=True))
        losses = [r["train_loss"] for r in rep.epochs]
        assert losses[-1] < losses[0]
        assert all(b <= a + 1e-3 for a, b in zip(losses, losses[1:]))

    def test_divergence_aborts_with_report(self, linear_data):
        m = LinearForecaster(6)
        m.poison_after = 10
        with pytest.raises(TrainingDiverged) as err:
            fit(m, linear_data, Schedule(max_epochs=5))
        assert err.value.report.stop_reason == "diverged"

    def test_same_seed_same_report(self, small_dataset):
        reps = [fit(ASTGCRN(toy_config("transformer", seed=1)), small_dataset, Schedule(max_epochs=2, batch_size=16))
                for _ in range(2)]
        assert reps[0].to_json() == reps[1].to_json()
        assert reps[0].to_csv() == reps[1].to_csv()


class TestEvaluate:
    def test_persistence_stub_matches_direct_script(self):
        vals = synth_series(nodes=2, steps=120, seed=8)
        ds = split_and_window(RawSeries(vals), 4, 4)
        res = evaluate(LinearForecaster(4, persistence=True), ds, "test")
        errs = {h: [] for h in range(4)}
        for s in range(96, 120 - 8 + 1):
            for h in range(4):
                for n in range(2):
                    errs[h].append((vals[s + 3, n] - vals[s + 4 + h, n], vals[s + 4 + h, n]))
        for h, mae, rmse, mape in res["horizons"]:
            e = errs[h - 1]
            assert mae == pytest.approx(sum(abs(a) for a, _ in e) / len(e), rel=1e-12)
            assert rmse == pytest.approx(math.sqrt(sum(a * a for a, _ in e) / len(e)), rel=1e-12)
            assert mape == pytest.approx(100 * sum(abs(a / t) for a, t in e) / len(e), rel=1e-12)

    def test_aggregate_is_mean_of_horizons(self, linear_data):
        res = evaluate(LinearForecaster(6, seed=4), linear_data, "val")
        maes = [r[1] for r in res["horizons"]]
        assert res["aggregate"][0] == pytest.approx(np.mean(maes), rel=1e-12)
        assert all(v >= 0 for row in res["horizons"] for v in row[1:])

    def test_csv_rows(self, linear_data):
        lines = metrics_csv(evaluate(LinearForecaster(6), linear_data, "test")).strip().split("\n")
        assert lines[0] == "horizon,MAE,RMSE,MAPE"
        assert len(lines) == 1 + 6 + 1 and lines[-1].startswith("all,")

    def test_empty_split(self, linear_data):
        from dataclasses import replace
        empty = replace(linear_data["test"], inputs=linear_data["test"].inputs[:0])
        with pytest.raises(ConfigurationError):
            evaluate(LinearForecaster(6), linear_data, empty)
