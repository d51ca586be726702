#!/usr/bin/env python3
"""Timing comparison of the numba kernels against their numpy fallbacks.

Run after installing the package:

    python benchmarks/bench_kernels.py

The first numba call compiles (cached across runs); compilation is done in
a warmup pass and excluded from the timings.
"""

import time

import numpy as np

from gcmem import kernels


def timeit(fn, *args, repeats=200):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_edge_gather_add(n_vertices, n_edges, dim, rng):
    x = rng.standard_normal((n_vertices, dim)).astype(np.float32)
    src = rng.integers(0, n_vertices, size=n_edges).astype(np.int64)
    dst = rng.integers(0, n_vertices, size=n_edges).astype(np.int64)
    out = np.zeros((n_vertices, dim), dtype=np.float32)

    def run_np():
        out[:] = 0
        kernels.edge_gather_add_numpy(out, x, src, dst)

    def run_nb():
        out[:] = 0
        kernels.edge_gather_add_numba(out, x, src, dst)

    return run_np, run_nb


def bench_scatter_add(n_rows, n_out, dim, rng):
    src = rng.standard_normal((n_rows, dim)).astype(np.float32)
    idx = rng.integers(0, n_out, size=n_rows).astype(np.int64)
    out = np.zeros((n_out, dim), dtype=np.float32)

    def run_np():
        out[:] = 0
        kernels.scatter_add_rows_numpy(out, idx, src)

    def run_nb():
        out[:] = 0
        kernels.scatter_add_rows_numba(out, idx, src)

    return run_np, run_nb


def bench_gae(steps, rng):
    rewards = rng.standard_normal(steps).astype(np.float32)
    values = rng.standard_normal(steps).astype(np.float32)

    def run_np():
        kernels.gae_scan_numpy(rewards, values, 0.5, 0.99, 1.0)

    def run_nb():
        kernels.gae_scan_numba(rewards, values, 0.5, 0.99, 1.0)

    return run_np, run_nb


def main():
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    cases = [
        ("edge_gather_add 200v/400e/32d", *bench_edge_gather_add(200, 400, 32, rng)),
        ("edge_gather_add 50v/150e/32d", *bench_edge_gather_add(50, 150, 32, rng)),
        ("scatter_add_rows 128x32 -> 200", *bench_scatter_add(128, 200, 32, rng)),
        ("gae_scan 200 steps", *bench_gae(200, rng)),
        ("gae_scan 30 steps", *bench_gae(30, rng)),
    ]
    print("warming up jit...")
    for _, _, run_nb in cases:
        run_nb()
    print(f"{'case':<34}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>9}")
    print("-" * 67)
    for name, run_np, run_nb in cases:
        t_np = timeit(run_np) * 1e6
        t_nb = timeit(run_nb) * 1e6
        print(f"{name:<34}{t_np:>12.1f}{t_nb:>12.1f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
