"""Time the fused graph-convolution kernels under both backends.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Reports the best-of-N wall time per call for the forward and backward
kernels at a few model-sized shapes, then one full training step of a
desk-scale model, once per backend.
"""
import argparse
import time

import numpy as np

from astgcrn import kernels
from astgcrn.data import RawSeries, split_and_window, synth_series
from astgcrn.model import ASTGCRN, ModelConfig, l1_loss
from astgcrn.tensor import backward

SHAPES = [
    # (B, N, C_in, C_out, K, D_e)
    (64, 8, 17, 32, 2, 4),
    (64, 8, 32, 32, 2, 4),
    (16, 32, 65, 128, 2, 10),
]


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernel(shape, repeat):
    B, N, ci, co, K, d = shape
    rng = np.random.default_rng(0)
    x = rng.normal(size=(B, N, ci))
    s = rng.normal(size=(K, N, N))
    e = rng.normal(size=(N, d))
    w = rng.normal(size=(d, K, ci, co))
    g = rng.normal(size=(B, N, co))
    row = {}
    for name in kernels.available_backends():
        prev = kernels.set_backend(name)
        try:
            _, xg = kernels.agc_forward(x, s, e, w)
            row[name] = (best_of(lambda: kernels.agc_forward(x, s, e, w), repeat),
                         best_of(lambda: kernels.agc_backward(x, s, e, w, xg, g), repeat))
        finally:
            kernels.set_backend(prev)
    return row


def bench_step(repeat):
    ds = split_and_window(RawSeries(synth_series()), 12, 12)
    X, Y = ds["train"].inputs[:64], ds["train"].targets_norm[:64]
    out = {}
    for name in kernels.available_backends():
        prev = kernels.set_backend(name)
        try:
            model = ASTGCRN(ModelConfig(num_nodes=8, hidden=16, embed_dim=4, heads=2, dtype="float32"))

            def step():
                model.zero_grad()
                backward(l1_loss(model.forward(X), Y))

            out[name] = best_of(step, max(3, repeat // 10))
        finally:
            kernels.set_backend(prev)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    names = kernels.available_backends()
    print(f"backends: {', '.join(names)}")
    print(f"{'shape (B,N,Ci,Co,K,De)':28s} " + "  ".join(f"{n + ' fwd/bwd ms':>22s}" for n in names))
    for shape in SHAPES:
        row = bench_kernel(shape, args.repeat)
        cells = "  ".join(f"{row[n][0] * 1e3:10.3f} /{row[n][1] * 1e3:9.3f}" for n in names)
        print(f"{str(shape):28s} {cells}")
    step = bench_step(args.repeat)
    print("train step (B=64, hidden 16): " + ", ".join(f"{n} {t * 1e3:.1f} ms" for n, t in step.items()))
    if len(step) == 2:
        print(f"speedup numba over numpy: {step['numpy'] / step['numba']:.2f}x")


if __name__ == "__main__":
    main()
