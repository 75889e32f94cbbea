"""Timing comparison of the compiled kernels against the numpy
fallback on the two hot loops: min-plus matrix products (barrier value
iteration) and budgeted graph relaxations (phase chain iteration).

Run as:  python benchmarks/bench_kernels.py
The fallback is forced in a subprocess via AUBRY_PURE_PYTHON=1.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np


def bench_matmul(kernels, n, repeats):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(n, n))
    b = rng.normal(size=(n, n))
    kernels.minplus_matmul(a, b)  # warm
    t0 = time.perf_counter()
    for _ in range(repeats):
        kernels.minplus_matmul(a, b)
    return (time.perf_counter() - t0) / repeats


def bench_budget(kernels, cells, levels, nbrs, sweeps):
    rng = np.random.default_rng(1)
    edges = cells * nbrs
    tgts = np.sort(rng.integers(0, cells, edges))
    indptr = np.zeros(cells + 1, dtype=np.int32)
    np.add.at(indptr, tgts + 1, 1)
    np.cumsum(indptr, out=indptr)
    srcs = rng.integers(0, cells, edges).astype(np.int32)
    units = rng.integers(1, max(2, levels // 2), edges).astype(np.int8)
    v = np.full((cells, levels + 1), np.inf)
    v[rng.integers(0, cells, 8), 0] = 0.0
    kernels.budget_jump_relax(v, indptr, srcs, units)  # warm
    t0 = time.perf_counter()
    for _ in range(sweeps):
        v = kernels.budget_jump_relax(v, indptr, srcs, units)
    return (time.perf_counter() - t0) / sweeps


def run_suite():
    from aubry import kernels
    out = {"backend": kernels.BACKEND, "results": {}}
    for n, repeats in ((128, 8), (256, 4)):
        out["results"][f"minplus_matmul n={n}"] = bench_matmul(kernels, n, repeats)
    for cells, nbrs, sweeps in ((4096, 60, 6), (16384, 120, 3)):
        out["results"][f"budget_relax cells={cells} nbrs={nbrs}"] = \
            bench_budget(kernels, cells, 8, nbrs, sweeps)
    return out


def main():
    if os.environ.get("AUBRY_BENCH_CHILD"):
        print(json.dumps(run_suite()))
        return
    mine = run_suite()
    env = dict(os.environ, AUBRY_PURE_PYTHON="1", AUBRY_BENCH_CHILD="1")
    proc = subprocess.run([sys.executable, __file__], env=env,
                          capture_output=True, text=True, check=True)
    other = json.loads(proc.stdout)
    runs = [mine, other] if mine["backend"] == "compiled" else [other, mine]
    compiled, python = runs
    width = max(len(k) for k in compiled["results"])
    print(f"{'kernel':<{width}}  {'compiled':>12}  {'python':>12}  {'speedup':>8}")
    for key in compiled["results"]:
        c = compiled["results"][key]
        p = python["results"][key]
        print(f"{key:<{width}}  {c * 1e3:>10.2f}ms  {p * 1e3:>10.2f}ms  "
              f"{p / c:>7.1f}x")


if __name__ == "__main__":
    main()
