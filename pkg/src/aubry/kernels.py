"""Backend dispatch for the hot numeric kernels.

Imports the compiled extension when present, else the numpy fallback.
Set AUBRY_PURE_PYTHON=1 to force the fallback (used by the benchmark
and the backend-parity tests).
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

_force_python = os.environ.get("AUBRY_PURE_PYTHON", "") not in ("", "0")
if _force_python:
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.backend_name()


def _as_c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def minplus_matmul(a, b, threads=1):
    """Min-plus product: out[i, j] = min_k a[i, k] + b[k, j]."""
    a = _as_c(a)
    bt = _as_c(b.T)
    out = np.empty((a.shape[0], bt.shape[0]))
    _run_rows(_impl.minplus_matmul_block, (a, bt, out), a.shape[0], threads)
    return out


def minplus_matmul_argmin(a, b, threads=1):
    """Min-plus product with the minimizing middle index (ties -> smallest)."""
    a = _as_c(a)
    bt = _as_c(b.T)
    out = np.empty((a.shape[0], bt.shape[0]))
    arg = np.empty((a.shape[0], bt.shape[0]), dtype=np.int32)
    _run_rows(_impl.minplus_matmul_argmin_block, (a, bt, out, arg), a.shape[0], threads)
    return out, arg


def minplus_matvec_argmin(e, w):
    """out[v] = min_u e[u] + w[u, v] plus argmin (ties -> smallest)."""
    e = _as_c(e)
    wt = _as_c(w.T)
    out = np.empty(wt.shape[0])
    arg = np.empty(wt.shape[0], dtype=np.int32)
    _impl.minplus_matvec_argmin(e, wt, out, arg)
    return out, arg


def budget_jump_relax(vin, indptr, srcs, units):
    """One jump-relaxation pass over a budgeted value table (Jacobi, deterministic)."""
    vout = vin.copy()
    _impl.budget_jump_relax(vin, vout, indptr, srcs, units)
    return vout


def budget_flow_apply(vin, indptr, srcs, w, units):
    """One flow step over a budgeted value table (CSR by landing cell)."""
    vout = np.full_like(vin, np.inf)
    _impl.budget_flow_apply(vin, vout, indptr, srcs, w, units)
    return vout


def _run_rows(fn, args, nrows, threads):
    if threads <= 1 or nrows < 4 * threads or BACKEND != "compiled":
        fn(*args, 0, nrows)
        return
    # Fixed row blocks: the split is deterministic, so results do not
    # depend on scheduling.
    bounds = np.linspace(0, nrows, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [
            pool.submit(fn, *args, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for f in futures:
            f.result()
