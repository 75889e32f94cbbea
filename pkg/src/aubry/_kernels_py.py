"""Pure-numpy twin of the compiled kernels in _kernels.pyx.

Slower (the budget relaxations in particular fall back to minimum.at
scatters) but dependency-free; selected by aubry.kernels when the
extension is missing or AUBRY_PURE_PYTHON is set.
"""

import numpy as np


def backend_name():
    return "python"


def minplus_matmul_block(a, bt, out, row0, row1):
    # Chunk rows so the (rows, k, j) broadcast temp stays modest.
    n = a.shape[1]
    chunk = max(1, int(2_000_000 // max(n * bt.shape[0], 1)) or 1)
    for lo in range(row0, row1, chunk):
        hi = min(lo + chunk, row1)
        out[lo:hi] = (a[lo:hi, :, None] + bt.T[None, :, :]).min(axis=1)


def minplus_matmul_argmin_block(a, bt, out, arg, row0, row1):
    n = a.shape[1]
    chunk = max(1, int(2_000_000 // max(n * bt.shape[0], 1)) or 1)
    for lo in range(row0, row1, chunk):
        hi = min(lo + chunk, row1)
        s = a[lo:hi, :, None] + bt.T[None, :, :]
        arg[lo:hi] = s.argmin(axis=1).astype(np.int32)
        out[lo:hi] = np.take_along_axis(s, arg[lo:hi, None, :].astype(np.int64), axis=1)[:, 0, :]


def minplus_matvec_argmin(e, wt, out, arg):
    s = e[None, :] + wt
    arg[:] = s.argmin(axis=1).astype(np.int32)
    out[:] = s[np.arange(s.shape[0]), arg]


def budget_jump_relax(vin, vout, indptr, srcs, units):
    nb = vout.shape[1]
    ncells = vout.shape[0]
    counts = np.diff(indptr)
    tgts = np.repeat(np.arange(ncells, dtype=np.int64), counts)
    srcs64 = srcs.astype(np.int64)
    for u in range(0, nb):
        sel = units == u
        if not sel.any():
            continue
        t, s = tgts[sel], srcs64[sel]
        for b in range(u, nb):
            np.minimum.at(vout[:, b], t, vin[s, b - u])


def budget_flow_apply(vin, vout, indptr, srcs, w, units):
    nb = vout.shape[1]
    ncells = vout.shape[0]
    counts = np.diff(indptr)
    tgts = np.repeat(np.arange(ncells, dtype=np.int64), counts)
    srcs64 = srcs.astype(np.int64)
    for u in range(0, nb):
        sel = units == u
        if not sel.any():
            continue
        t, s, we = tgts[sel], srcs64[sel], w[sel]
        for b in range(0, nb - u):
            np.minimum.at(vout[:, b + u], t, vin[s, b] + we)
