"""Minimal action between configuration points by dynamic programming
over broken paths, and assembly of the one-period min-plus kernel
A[i][j] ~ F(q_i, t0; q_j, t0 + 1) on a uniform circle grid.

Path class: positions sampled at K uniform times, straight segments in
the universal cover between samples (shorter lift plus the +-1 winding
candidates), per-segment action by the midpoint rule.  An optional
coordinate-descent pass moves the interior knots off the grid and can
only tighten values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import wrap_unit


@dataclass(frozen=True)
class ConfigGrid:
    """Uniform grid q_i = i/n on the circle, attached to time section t0."""

    n: int
    section_time: float = 0.0

    def __post_init__(self):
        if self.n < 8:
            raise ValueError("ConfigGrid needs n >= 8")

    @property
    def nodes(self):
        return np.arange(self.n) / self.n

    @property
    def step(self):
        return 1.0 / self.n


@dataclass(frozen=True)
class ActionKernel:
    grid: ConfigGrid
    A: np.ndarray
    substeps: int
    refine: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.grid.n


def _lagrangian_grid(model, mids, v, tm):
    """L on arrays; built-in models take the closed-form quadratic path."""
    if model.quadratic:
        return 0.5 * v * v + model.m_shift(mids, tm) * v - model.potential(mids, tm)
    out = np.empty_like(mids)
    flat_m, flat_v = mids.ravel(), np.broadcast_to(v, mids.shape).ravel()
    res = out.ravel()
    for i in range(flat_m.size):
        res[i] = model.lagrangian(flat_m[i], flat_v[i], tm)
    return out


def _stage_cost(model, x_from, x_to, tau, t_mid):
    """Action of straight segments x_from -> x_to (universal cover) of
    duration tau, midpoint quadrature, minimized over winding lifts."""
    d0 = x_to - x_from
    d0 = d0 - np.round(d0)
    best = None
    for lift in (-1.0, 0.0, 1.0):
        d = d0 + lift
        v = d / tau
        mids = wrap_unit(x_from + 0.5 * d)
        c = tau * _lagrangian_grid(model, mids, v, t_mid)
        best = c if best is None else np.minimum(best, c)
    return best


def _stage_matrices(model, n, t0, s, K):
    """Per-substep cost matrices C_k[a, b] for grid-to-grid hops.  For
    time-independent models all K matrices coincide and only one is built."""
    nodes = np.arange(n) / n
    tau = s / K
    x_from = nodes[:, None]
    x_to = nodes[None, :]
    if not model.time_dependent:
        return [_stage_cost(model, x_from, x_to, tau, t0 + 0.5 * tau)], True
    mats = []
    for k in range(K):
        t_mid = t0 + (k + 0.5) * tau
        mats.append(_stage_cost(model, x_from, x_to, tau, t_mid))
    return mats, False


def _minplus_power(c, K, threads=1):
    """K-fold min-plus power by repeated squaring."""
    result = None
    base = c
    k = K
    while k > 0:
        if k & 1:
            result = base if result is None else kernels.minplus_matmul(result, base, threads)
        k >>= 1
        if k:
            base = kernels.minplus_matmul(base, base, threads)
    return result


def build_kernel(model, grid, K=16, refine=False, threads=1, refine_opts=None):
    """One-period action kernel on the grid: A[i][j] approximates
    F(q_i, t0; q_j, t0 + 1).

    With refine=True, DP paths are extracted and tightened by
    coordinate descent over interior knots with continuous positions;
    the refined value never exceeds the DP value.
    """
    if K < 4:
        raise ValueError("need at least 4 substeps per period")
    n = grid.n
    mats, stationary = _stage_matrices(model, n, grid.section_time, 1.0, K)
    if not refine:
        if stationary:
            A = _minplus_power(mats[0], K, threads)
        else:
            A = mats[0]
            for k in range(1, K):
                A = kernels.minplus_matmul(A, mats[k], threads)
        return ActionKernel(grid=grid, A=A, substeps=K, refine={"enabled": False})

    # Sequential fold keeping argmins so every pair's optimal broken
    # path can be reconstructed for the refinement pass.
    A = mats[0]
    args = []
    for k in range(1, K):
        A, arg = kernels.minplus_matmul_argmin(A, mats[k % len(mats)], threads)
        args.append(arg)
    paths = _extract_paths(args, n)
    opts = dict(max_sweeps=200, value_tol=1e-10)
    opts.update(refine_opts or {})
    A_ref, sweeps = _refine_paths(model, paths, grid.section_time, 1.0, K, **opts)
    A_out = np.minimum(A, A_ref)
    return ActionKernel(grid=grid, A=A_out, substeps=K,
                        refine={"enabled": True, "sweeps": sweeps})


def _extract_paths(args, n):
    """Knot positions (universal cover) of the optimal K-stage paths for
    all n^2 (start, end) pairs; shape (n, n, K+1)."""
    K = len(args) + 1
    nodes = np.arange(n) / n
    # mid[k][i, j]: node index at stage boundary k on the best path i->j
    idx = np.empty((K + 1, n, n), dtype=np.int64)
    idx[0] = np.arange(n)[:, None]
    idx[K] = np.arange(n)[None, :]
    # args[k-1][i, j] is the best intermediate node after folding stage k;
    # walk backward from the end.
    back = np.arange(n)[None, :].repeat(n, axis=0)
    for k in range(K - 1, 0, -1):
        back = np.take_along_axis(args[k - 1], back, axis=1)
        idx[k] = back
    x = nodes[idx]  # circle representatives
    # Lift to the cover: accumulate shorter-arc displacements from the start.
    d = x[1:] - x[:-1]
    d -= np.round(d)
    lifted = np.concatenate([x[:1], x[:1] + np.cumsum(d, axis=0)], axis=0)
    return np.moveaxis(lifted, 0, -1)


def _path_value(model, paths, t0, tau):
    x = paths
    d = x[..., 1:] - x[..., :-1]
    v = d / tau
    mids = wrap_unit(x[..., :-1] + 0.5 * d)
    K = d.shape[-1]
    tm = t0 + (np.arange(K) + 0.5) * tau
    return (tau * _lagrangian_grid(model, mids, v, tm)).sum(axis=-1)


def _refine_paths(model, paths, t0, s, K, max_sweeps=200, value_tol=1e-10):
    """Coordinate descent over interior knots, vectorized across pairs.

    Per-knot updates use successive parabolic interpolation of the two
    adjacent segment costs (exact in one step when the local cost is
    quadratic, e.g. the free particle) and accept only improvements, so
    the total value is non-increasing sweep by sweep.
    """
    tau = s / K
    tm = t0 + (np.arange(K) + 0.5) * tau
    prev_total = _path_value(model, paths, t0, tau)

    def local_cost(xm, xl, xr, tl, tr):
        dl = xm - xl
        dr = xr - xm
        cl = tau * _lagrangian_grid(model, wrap_unit(xl + 0.5 * dl), dl / tau, tl)
        cr = tau * _lagrangian_grid(model, wrap_unit(xm + 0.5 * dr), dr / tau, tr)
        return cl + cr

    for sweep in range(max_sweeps):
        for m in range(1, K):
            xl = paths[..., m - 1]
            xr = paths[..., m + 1]
            x = paths[..., m]
            f = local_cost(x, xl, xr, tm[m - 1], tm[m])
            h = np.maximum(0.25 * np.abs(xr - xl), 1e-4)
            for _ in range(2):
                fm = local_cost(x - h, xl, xr, tm[m - 1], tm[m])
                fp = local_cost(x + h, xl, xr, tm[m - 1], tm[m])
                denom = fm - 2.0 * f + fp
                with np.errstate(divide="ignore", invalid="ignore"):
                    step = np.where(denom > 0.0, 0.5 * h * (fm - fp) / denom, 0.0)
                step = np.clip(step, -2.0 * h, 2.0 * h)
                cand = x + step
                fcand = local_cost(cand, xl, xr, tm[m - 1], tm[m])
                better = fcand < f
                x = np.where(better, cand, x)
                f = np.where(better, fcand, f)
                h = 0.25 * h
            paths[..., m] = x
        total = _path_value(model, paths, t0, tau)
        if np.max(prev_total - total) < value_tol:
            prev_total = total
            break
        prev_total = total
    return prev_total, sweep + 1


def one_step_action(model, q0, t0, q1, s, K=16, local_refine=False, n=256,
                    refine_opts=None):
    """Minimal broken-path action F(q0, t0; q1, t0 + s) for s >= 1.

    Interior knots run over the n-point grid; with local_refine they are
    released to continuous positions afterward.
    """
    if s < 1.0:
        raise ValueError("kernel regime requires duration s >= 1")
    if K < 4:
        raise ValueError("need at least 4 substeps")
    nodes = np.arange(n) / n
    tau = s / K
    # stage 0: q0 -> grid, stages 1..K-2: grid -> grid, stage K-1: grid -> q1
    c_first = _stage_cost(model, np.array([[q0]]), nodes[None, :], tau, t0 + 0.5 * tau)
    value = c_first[0]
    args = []
    x_from = nodes[:, None]
    x_to = nodes[None, :]
    for k in range(1, K - 1):
        ck = _stage_cost(model, x_from, x_to, tau, t0 + (k + 0.5) * tau)
        nxt = value[:, None] + ck
        arg = nxt.argmin(axis=0).astype(np.int64)
        value = nxt.min(axis=0)
        args.append(arg)
    c_last = _stage_cost(model, nodes[:, None], np.array([[q1]]), tau,
                         t0 + (K - 0.5) * tau)[:, 0]
    final = value + c_last
    j_best = int(final.argmin())
    best = float(final[j_best])
    if not local_refine:
        return best
    # reconstruct the knot chain and refine it
    chain = [j_best]
    for arg in reversed(args):
        chain.append(int(arg[chain[-1]]))
    chain.reverse()
    x = np.empty(K + 1)
    x[0] = q0
    pos = [nodes[c] for c in chain] + [wrap_unit(np.asarray(q1))]
    for m, val in enumerate(pos, start=1):
        d = float(val) - x[m - 1]
        x[m] = x[m - 1] + (d - round(d))
    # candidate winding of the final endpoint was resolved by shorter
    # lift; also try the two neighbors and keep the best refined value
    best_ref = best
    opts = dict(max_sweeps=200, value_tol=1e-12)
    opts.update(refine_opts or {})
    for lift in (-1.0, 0.0, 1.0):
        xx = x.copy()
        xx[K] = x[K] + lift
        path = xx[None, None, :].copy()
        val, _ = _refine_paths(model, path, t0, s, K, **opts)
        best_ref = min(best_ref, float(val[0, 0]))
    return best_ref


def kernel_to_csv(kernel: ActionKernel, path):
    """CSV export, row-major, 17 significant digits; metadata in '#' comments."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# n={kernel.n} t0={kernel.grid.section_time!r} K={kernel.substeps}\n")
        for row in kernel.A:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
