"""Series ingestion, Z-score normalization, chronological splits, windows, metrics."""
import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DegenerateDataError, DimensionError, IngestionError

SPLIT_NAMES = ("train", "val", "test")
MAPE_FLOOR = 1e-3


@dataclass
class RawSeries:
    values: np.ndarray  # (S, N)
    interval: str = "5 mins"
    source: str = ""

    @property
    def num_steps(self):
        return self.values.shape[0]

    @property
    def num_nodes(self):
        return self.values.shape[1]


def ingest_csv(path, interval="5 mins", fill_missing=False):
    """Read a ``node_0,...,node_{N-1}`` CSV into an (S, N) series.

    Empty cells are rejected unless ``fill_missing`` is set, in which case
    they take the previous row's value.
    """
    if not os.path.exists(path):
        raise IngestionError(f"no such file: {path}")
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path} is empty", line=1)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise IngestionError(f"expected {width} columns, found {len(row)}", line=lineno)
            vals = []
            for col, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    if not fill_missing or not rows:
                        raise IngestionError(f"missing value in column {header[col]!r}", line=lineno)
                    vals.append(rows[-1][col])
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(f"non-numeric cell {cell!r} in column {header[col]!r}", line=lineno)
                if not math.isfinite(v):
                    raise IngestionError(f"non-finite cell {cell!r}", line=lineno)
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise IngestionError(f"{path} has a header but no data rows", line=2)
    return RawSeries(np.array(rows, dtype=np.float64), interval=interval, source=str(path))


def write_csv(path, values):
    """Write an (S, N) array with a ``node_i`` header; floats use repr for exact round trips."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(f"node_{i}" for i in range(values.shape[1])) + "\n")
        for row in values:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def ingest_adjacency(path):
    """Square N x N adjacency in the same CSV layout as the series."""
    A = ingest_csv(path).values
    if A.shape[0] != A.shape[1]:
        raise IngestionError(f"adjacency in {path} is {A.shape}, expected square")
    return A


@dataclass
class Normalizer:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateDataError(f"normalizer std must be > 0, got {self.std}")

    def transform(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def inverse(self, x):
        return np.asarray(x) * self.std + self.mean


def fit_normalizer(train_part):
    """Mean and population standard deviation over every training entry."""
    x = np.asarray(getattr(train_part, "data", train_part), dtype=np.float64)
    if x.size == 0:
        raise DegenerateDataError("cannot fit a normalizer on empty data")
    std = float(x.std())
    if std == 0.0:
        raise DegenerateDataError("training data has zero variance")
    return Normalizer(float(x.mean()), std)


@dataclass
class Split:
    name: str
    inputs: np.ndarray        # (M, T', N, 1), normalized
    targets: np.ndarray       # (M, T, N, 1), original units
    targets_norm: np.ndarray  # (M, T, N, 1)
    starts: np.ndarray        # absolute index of each window's first input step
    segment: tuple            # [begin, end) in the raw series

    def __len__(self):
        return self.inputs.shape[0]


@dataclass
class WindowedDataset:
    splits: dict
    normalizer: Normalizer
    input_steps: int
    output_steps: int
    num_nodes: int
    num_steps: int
    interval: str = "5 mins"
    source: str = ""
    boundaries: tuple = field(default_factory=tuple)

    def __getitem__(self, name):
        return self.splits[name]

    def manifest(self):
        return {
            "N": self.num_nodes,
            "S": self.num_steps,
            "interval": self.interval,
            "source": self.source,
            "input_steps": self.input_steps,
            "output_steps": self.output_steps,
            "normalizer": {"mean": self.normalizer.mean, "std": self.normalizer.std},
            "splits": {
                k: {"segment": list(v.segment), "windows": len(v)} for k, v in self.splits.items()
            },
        }

    def write_manifest(self, path):
        with open(path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)


def split_bounds(num_steps, ratios=(6, 2, 2)):
    total = float(sum(ratios))
    a = int(math.floor(num_steps * ratios[0] / total))
    b = int(math.floor(num_steps * (ratios[0] + ratios[1]) / total))
    return (0, a), (a, b), (b, num_steps)


def window_segment(values, begin, end, input_steps, output_steps):
    """All (input, target) windows fully inside ``values[begin:end]``."""
    span = input_steps + output_steps
    count = (end - begin) - span + 1
    if count < 1:
        raise ConfigurationError(
            f"segment [{begin}, {end}) has {end - begin} steps, need at least {span}"
        )
    starts = np.arange(begin, begin + count)
    idx = starts[:, None] + np.arange(span)[None, :]
    win = values[idx]  # (M, span, N)
    return win[:, :input_steps], win[:, input_steps:], starts


def split_and_window(series, input_steps=12, output_steps=12, ratios=(6, 2, 2)):
    values = series.values if isinstance(series, RawSeries) else np.asarray(series, dtype=np.float64)
    S, N = values.shape
    bounds = split_bounds(S, ratios)
    for name, (a, b) in zip(SPLIT_NAMES, bounds):
        if b - a < input_steps + output_steps:
            raise ConfigurationError(
                f"{name} segment has {b - a} steps, need at least {input_steps + output_steps}"
            )
    tr0, tr1 = bounds[0]
    norm = fit_normalizer(values[tr0:tr1])
    splits = {}
    for name, (a, b) in zip(SPLIT_NAMES, bounds):
        x, y, starts = window_segment(values, a, b, input_steps, output_steps)
        splits[name] = Split(
            name=name,
            inputs=norm.transform(x)[..., None],
            targets=y[..., None].copy(),
            targets_norm=norm.transform(y)[..., None],
            starts=starts,
            segment=(a, b),
        )
    return WindowedDataset(
        splits=splits,
        normalizer=norm,
        input_steps=input_steps,
        output_steps=output_steps,
        num_nodes=N,
        num_steps=S,
        interval=getattr(series, "interval", ""),
        source=getattr(series, "source", ""),
        boundaries=bounds,
    )


def evaluate_metrics(pred, truth, horizon=None):
    """(MAE, RMSE, MAPE%) in the units given; MAPE divides by the true value.

    Arrays are (M, T, N) (a trailing channel of 1 is accepted). ``horizon``
    is 1-based and restricts the metrics to that forecast step. Entries whose
    true magnitude is below 1e-3 are left out of MAPE.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"metrics: prediction {pred.shape} vs truth {truth.shape}")
    if horizon is not None:
        if pred.ndim < 2 or not 1 <= horizon <= pred.shape[1]:
            raise DimensionError(f"horizon {horizon} out of range for shape {pred.shape}")
        pred = pred[:, horizon - 1]
        truth = truth[:, horizon - 1]
    err = pred - truth
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    mask = np.abs(truth) >= MAPE_FLOOR
    mape = float(100.0 * np.mean(np.abs(err[mask] / truth[mask]))) if mask.any() else 0.0
    return mae, rmse, mape


def persistence_forecast(split, normalizer, output_steps=None):
    """Repeat the last observed input value across every horizon (original units)."""
    last = normalizer.inverse(split.inputs[:, -1:])  # (M, 1, N, 1)
    steps = split.targets.shape[1] if output_steps is None else output_steps
    return np.repeat(last, steps, axis=1)


def synth_series(nodes=8, steps=2016, seed=0, coupling=0.3, noise=0.05, period=288):
    """Seeded multi-node sinusoids with a fixed linear cross-node mix plus Gaussian noise.

    Each node gets its own phase, amplitude and level; the clean signals are
    mixed by ``I + coupling * M`` where ``M`` is a fixed row-normalized ring
    coupling, and white noise of standard deviation ``noise`` is added last.
    """
    if nodes < 1 or steps < 1:
        raise ConfigurationError(f"nodes and steps must be >= 1, got {nodes}, {steps}")
    rng = np.random.default_rng(seed)
    t = np.arange(steps, dtype=np.float64)[:, None]
    phase = 2.0 * np.pi * np.arange(nodes) / nodes
    amp = 1.5 + rng.uniform(0.0, 1.0, nodes)
    level = 4.0 + rng.uniform(0.0, 2.0, nodes)
    clean = level + amp * np.sin(2.0 * np.pi * t / period + phase)
    clean += 0.3 * amp * np.sin(4.0 * np.pi * t / period + 2.0 * phase)
    M = np.zeros((nodes, nodes))
    for i in range(nodes):
        if nodes > 1:
            M[i, (i + 1) % nodes] += 0.5
            M[i, (i - 1) % nodes] += 0.5
    mixed = clean @ (np.eye(nodes) + coupling * M).T
    return mixed + noise * rng.standard_normal((steps, nodes))


def correlation_adjacency(values, threshold=0.5):
    """Static similarity graph from absolute Pearson correlation of the series."""
    corr = np.abs(np.corrcoef(np.asarray(values, dtype=np.float64).T))
    corr = np.nan_to_num(corr)
    A = np.where(corr >= threshold, corr, 0.0)
    np.fill_diagonal(A, 1.0)
    return A
