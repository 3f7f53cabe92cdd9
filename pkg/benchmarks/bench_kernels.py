"""Compare the numba and pure-numpy forest kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--samples 120] [--features 40] [--trees 100]

Times forest training and prediction on random data with both kernel paths
and checks that the two paths give identical votes.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from spectraforge import _kernels, classify


def timed(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=120)
    ap.add_argument("--features", type=int, default=40)
    ap.add_argument("--classes", type=int, default=6)
    ap.add_argument("--trees", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    X = rng.normal(size=(args.samples, args.features))
    y = [str(v) for v in rng.integers(0, args.classes, args.samples)]
    cfg = classify.ForestConfig(n_trees=args.trees, seed=1)

    paths = [("numpy", False)] + ([("numba", True)] if _kernels.HAVE_NUMBA else [])
    results = {}
    for name, flag in paths:
        _kernels.USE_NUMBA = flag
        classify.forest_train(X[:20], y[:20], classify.ForestConfig(n_trees=2))  # JIT warm-up
        t_fit, model = timed(lambda: classify.forest_train(X, y, cfg), args.repeat)
        t_pred, votes = timed(lambda: model.votes(X), args.repeat)
        results[name] = (t_fit, t_pred, votes)
        print(f"{name:6s} fit {t_fit * 1e3:9.1f} ms   predict {t_pred * 1e3:8.2f} ms")

    if len(results) == 2:
        same = np.array_equal(results["numpy"][2], results["numba"][2])
        speed = results["numpy"][0] / results["numba"][0]
        print(f"fit speed-up {speed:.1f}x; identical votes: {same}")
    else:
        print("numba not installed; only the numpy path was timed")


if __name__ == "__main__":
    main()
