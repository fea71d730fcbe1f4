"""Compare the compiled kernels with the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from dynamix import backend
from dynamix.model import forecast, init_model
from dynamix.training import TrainConfig, compute_gradients


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    model = init_model(seed=0)
    C = rng.standard_normal((3, 500))
    X = rng.standard_normal((16, 3, 550))
    cfg = TrainConfig()
    noise = rng.standard_normal((16, 549 - 450, 3))
    t = np.arange(12_000) * 0.05
    x = np.sin(t) + 0.1 * np.sin(2.7 * t)
    E = np.ascontiguousarray(np.stack([x[10:], x[5:-5], x[:-10]], axis=1))
    return {
        "forecast 10^4 steps": lambda k: forecast(model, C, 10_000, kernels=k),
        "gradient, batch of 16": lambda k: compute_gradients(model, X, cfg, noise=noise, kernels=k),
        "neighbour search, 12k points": lambda k: k.nearest_neighbors(E, E.shape[0] - 50, 150.0, 0.2),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if backend.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        tp = best_of(lambda: fn(backend.reference), args.repeat)
        tc = best_of(lambda: fn(backend.compiled), args.repeat)
        print(f"{name:32s} {tp:11.3f} {tc:13.3f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
