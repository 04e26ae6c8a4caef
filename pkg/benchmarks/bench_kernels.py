"""Benchmark the numba kernels against their pure-numpy twins.

Runs each kernel pair on the same synthetic workload, checks the outputs are
bitwise identical, and reports best-of-N wall times. Numba functions are
called once before timing so compilation is not billed to the measurement.

    python3 benchmarks/bench_kernels.py [--boxes 4000] [--values 2000000]
                                        [--repeats 5]
"""

import argparse
import time

import numpy as np

from loctok._kernels import HAS_NUMBA, IMPLEMENTATIONS


def best_of(func, args, repeats):
    times = []
    for _ in range(repeats):
        started = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - started)
    return min(times)


def suppress_workload(rng, n):
    # Clustered boxes sorted by descending score, the shape the engine feeds in.
    centers = rng.uniform(0.0, 1000.0, size=(n, 2))
    centers += rng.normal(0.0, 40.0, size=(n, 2))
    sizes = rng.uniform(20.0, 120.0, size=(n, 2))
    boxes = np.empty((n, 4))
    boxes[:, 0] = centers[:, 0] - sizes[:, 0] / 2
    boxes[:, 1] = centers[:, 1] - sizes[:, 1] / 2
    boxes[:, 2] = centers[:, 0] + sizes[:, 0] / 2
    boxes[:, 3] = centers[:, 1] + sizes[:, 1] / 2
    labels = rng.integers(0, 20, size=n).astype(np.int64)
    return np.ascontiguousarray(boxes), labels


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--boxes", type=int, default=4000)
    parser.add_argument("--values", type=int, default=2_000_000)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(args.seed)
    boxes, labels = suppress_workload(rng, args.boxes)
    values = rng.uniform(-0.1, 1.1, size=args.values)
    xs = rng.uniform(0.0, 1.0, size=args.values)
    ys = rng.uniform(0.0, 1.0, size=args.values)

    cases = [
        ("suppress_sorted (class-aware)", "suppress_sorted", (boxes, labels, 0.5, True)),
        ("suppress_sorted (agnostic)", "suppress_sorted", (boxes, labels, 0.5, False)),
        ("histogram_counts (50 bins)", "histogram_counts", (values, 0.0, 1.0, 50)),
        ("heatmap_counts (64x64)", "heatmap_counts", (xs, ys, 64)),
    ]

    width = max(len(name) for name, _, _ in cases)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, key, call_args in cases:
        np_func = IMPLEMENTATIONS["numpy"][key]
        nb_func = IMPLEMENTATIONS["numba"][key]
        expected = np_func(*call_args)
        got = nb_func(*call_args)  # also compiles before timing
        if not np.array_equal(expected, got):
            raise SystemExit(f"{key}: backends disagree")
        t_np = best_of(np_func, call_args, args.repeats)
        t_nb = best_of(nb_func, call_args, args.repeats)
        print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
