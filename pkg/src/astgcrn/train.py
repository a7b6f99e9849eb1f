"""Adam with coupled weight decay, the epoch loop, early stopping and evaluation."""
import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import evaluate_metrics
from .errors import ConfigurationError, NumericError
from .model import l1_loss
from .tensor import Tensor, backward, no_grad


@dataclass
class AdamState:
    lr: float = 0.003
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **kw):
        st = cls(**kw)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def adam_step(params, state):
    """One bias-corrected Adam update; weight decay is added to the gradient first."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_gradients(params, max_norm):
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if total > max_norm > 0:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


@dataclass
class Schedule:
    lr: float = 0.003
    weight_decay: float = 0.0
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 15
    seed: int = 0
    full_batch: bool = False
    clip_norm: float | None = None
    eval_batch_size: int = 256


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_mae: float = float("inf")
    stop_reason: str = ""
    wall_time: float = 0.0

    def to_dict(self, timing=False):
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d

    def to_json(self, timing=False):
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True)

    def to_csv(self):
        buf = io.StringIO()
        cols = ["epoch", "train_loss", "val_mae", "val_rmse", "val_mape"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.epochs:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in cols[1:]])
        return buf.getvalue()


class TrainingDiverged(NumericError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


def predict_normalized(model, inputs, batch_size=256):
    """Forward pass without recording, batched; returns a numpy array."""
    outs = []
    with no_grad():
        for i in range(0, inputs.shape[0], batch_size):
            y = model.forward(inputs[i:i + batch_size])
            outs.append(y.data if isinstance(y, Tensor) else np.asarray(y))
    return np.concatenate(outs, axis=0)


def predict(model, split, normalizer, batch_size=256):
    """Forecasts in original units, (M, T, N, 1)."""
    return normalizer.inverse(predict_normalized(model, split.inputs, batch_size))


def fit(model, data, schedule=None, val_hook=None, log=None):
    """Train with seeded shuffling, keep the best-validation weights, stop on patience.

    ``val_hook(epoch, metrics) -> metrics`` may replace the validation metrics
    (used to freeze validation in tests).
    """
    schedule = schedule or Schedule()
    train, val = data["train"], data["val"]
    if len(train) == 0 or len(val) == 0:
        raise ConfigurationError("fit needs nonempty train and val splits")
    params = model.parameters()
    state = AdamState.for_params(params, lr=schedule.lr, weight_decay=schedule.weight_decay)
    rng = np.random.default_rng(schedule.seed)
    report = TrainReport()
    best_state = model.get_state()
    bad = 0
    t0 = time.perf_counter()
    M = len(train)
    bs = M if schedule.full_batch else schedule.batch_size
    dtype = model.dtype if hasattr(model, "dtype") else np.float64
    X_all = train.inputs.astype(dtype)
    Y_all = train.targets_norm.astype(dtype)

    for epoch in range(1, schedule.max_epochs + 1):
        order = np.arange(M) if schedule.full_batch else rng.permutation(M)
        total = 0.0
        try:
            for i in range(0, M, bs):
                idx = order[i:i + bs]
                model.zero_grad()
                loss = l1_loss(model.forward(X_all[idx]), Y_all[idx])
                backward(loss)
                if schedule.clip_norm:
                    clip_gradients(params, schedule.clip_norm)
                adam_step(params, state)
                total += loss.item() * len(idx)
        except NumericError as exc:
            report.stop_reason = "diverged"
            report.wall_time = time.perf_counter() - t0
            model.set_state(best_state)
            raise TrainingDiverged(f"epoch {epoch}: {exc}", report) from exc

        pred = predict(model, val, data.normalizer, schedule.eval_batch_size)
        metrics = evaluate_metrics(pred, val.targets)
        if val_hook is not None:
            metrics = tuple(val_hook(epoch, metrics))
        row = {
            "epoch": epoch,
            "train_loss": total / M,
            "val_mae": metrics[0],
            "val_rmse": metrics[1],
            "val_mape": metrics[2],
        }
        report.epochs.append(row)
        if log is not None:
            log(row)
        if metrics[0] < report.best_val_mae:
            report.best_val_mae = metrics[0]
            report.best_epoch = epoch
            best_state = model.get_state()
            bad = 0
        else:
            bad += 1
            if bad >= schedule.patience:
                report.stop_reason = "early_stop"
                break
    else:
        report.stop_reason = "max_epochs"

    model.set_state(best_state)
    report.wall_time = time.perf_counter() - t0
    return report


def evaluate(model, data, split="test", batch_size=256):
    """Per-horizon and aggregate (MAE, RMSE, MAPE) in original units."""
    part = data[split] if isinstance(split, str) else split
    if len(part) == 0:
        raise ConfigurationError(f"split {split!r} is empty")
    pred = predict(model, part, data.normalizer, batch_size)
    truth = part.targets
    rows = [(h,) + evaluate_metrics(pred, truth, horizon=h) for h in range(1, truth.shape[1] + 1)]
    return {"horizons": rows, "aggregate": evaluate_metrics(pred, truth)}


def metrics_csv(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["horizon", "MAE", "RMSE", "MAPE"])
    for h, mae, rmse, mape in result["horizons"]:
        w.writerow([h, f"{mae:.6f}", f"{rmse:.6f}", f"{mape:.6f}"])
    mae, rmse, mape = result["aggregate"]
    w.writerow(["all", f"{mae:.6f}", f"{rmse:.6f}", f"{mape:.6f}"])
    return buf.getvalue()
