"""Critical value of a Hamiltonian from its action kernel: alpha is the
negative minimum mean cycle of the one-period kernel, computed with
Karp's recurrence; a value-iteration slope test classifies shifted
kernels as sub-critical / critical / super-critical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import kernels
from .action import ActionKernel, ConfigGrid, build_kernel


@dataclass(frozen=True)
class CriticalResult:
    alpha: float
    cycle: List[int]
    mean_residual: float
    min_mean: float


@dataclass(frozen=True)
class ClassificationResult:
    classification: str  # sub_critical | critical | super_critical | indeterminate
    slope: float
    shift: float
    iterations: int
    diag_tail: np.ndarray = field(repr=False, default=None)


def _karp_tables(W):
    """E[j][v] = min weight of a walk with exactly j edges ending at v,
    start free (all-zero initialization), with per-step argmins."""
    n = W.shape[0]
    E = np.empty((n + 1, n))
    parents = np.empty((n + 1, n), dtype=np.int32)
    E[0] = 0.0
    parents[0] = -1
    e = E[0]
    for j in range(1, n + 1):
        e, arg = kernels.minplus_matvec_argmin(e, W)
        E[j] = e
        parents[j] = arg
    return E, parents


def _canonical_rotation(cycle):
    """Rotate a cycle so it starts at its smallest node; among rotations
    starting at that node pick the lexicographically smallest."""
    m = min(cycle)
    best = None
    for i, v in enumerate(cycle):
        if v == m:
            rot = cycle[i:] + cycle[:i]
            if best is None or rot < best:
                best = rot
    return best


def min_mean_cycle(kernel) -> CriticalResult:
    """Minimum over directed cycles of (weight / length), via Karp's
    recurrence on the complete kernel graph; alpha is its negative.

    One optimal cycle is extracted by walking the predecessor table of
    the critical endpoint; ties break toward smaller node indices and
    the reported cycle is in canonical rotation, so the output is
    reproducible.
    """
    W = kernel.A if isinstance(kernel, ActionKernel) else np.asarray(kernel, dtype=float)
    n = W.shape[0]
    E, parents = _karp_tables(W)
    # mu = min_v max_{0 <= j < n} (E[n][v] - E[j][v]) / (n - j)
    j = np.arange(n)
    ratios = (E[n][None, :] - E[:n]) / (n - j)[:, None]
    per_v = ratios.max(axis=0)
    v_star = int(per_v.argmin())
    mu = float(per_v[v_star])

    # Reconstruct the optimal n-edge walk ending at v_star and cut out
    # its simple cycles; each has mean exactly mu (up to rounding).
    walk = [v_star]
    for jj in range(n, 0, -1):
        walk.append(int(parents[jj][walk[-1]]))
    walk.reverse()
    cycles = []
    seen = {}
    stack = []
    for v in walk:
        if v in seen:
            start = seen[v]
            cyc = stack[start:]
            for u in cyc:
                del seen[u]
            del stack[start:]
            cycles.append(cyc)
        seen[v] = len(stack)
        stack.append(v)

    def cyc_mean(cyc):
        w = sum(W[cyc[i], cyc[(i + 1) % len(cyc)]] for i in range(len(cyc)))
        return w / len(cyc)

    scale = max(1.0, abs(mu))
    good = [c for c in cycles if abs(cyc_mean(c) - mu) <= 1e-9 * scale]
    if not good:  # rounding pushed every cut cycle off; keep the closest
        good = [min(cycles, key=lambda c: abs(cyc_mean(c) - mu))]
    best = min(_canonical_rotation(c) for c in good)
    return CriticalResult(
        alpha=-mu,
        cycle=list(best),
        mean_residual=float(abs(cyc_mean(best) - mu)),
        min_mean=mu,
    )


def critical_value(model, grid: ConfigGrid, K=16, threads=1) -> CriticalResult:
    """alpha(H) for the model on the given grid: build_kernel then
    min_mean_cycle."""
    kernel = build_kernel(model, grid, K=K, threads=threads)
    return min_mean_cycle(kernel)


def criticality_class(kernel, shift, n_iters=None, tol_slope=1e-4,
                      threads=1) -> ClassificationResult:
    """Growth-slope trichotomy test on the shifted kernel A + shift.

    Value-iterates min-plus powers and measures the per-step growth of
    the running diagonal minimum over the last half of the iterations;
    the slope converges to shift + (minimum cycle mean of A).  Kernel
    convention: A + c is the kernel of H - c, so slope > 0 (c above
    alpha) marks the super-critical regime where the barrier of H - c
    diverges to +infinity, and slope < 0 the sub-critical one.
    """
    W = kernel.A if isinstance(kernel, ActionKernel) else np.asarray(kernel, dtype=float)
    n = W.shape[0]
    if n_iters is None:
        n_iters = 10 * n
    B = W + shift
    V = B.copy()
    # diag_min[k] tracks min_i V^(k+1)[i][i] as the iteration runs; its
    # per-step growth converges to the minimum cycle mean of B.
    diag_min = np.empty(n_iters)
    diag_min[0] = V.diagonal().min()
    for it in range(1, n_iters):
        V = kernels.minplus_matmul(V, B, threads)
        diag_min[it] = V.diagonal().min()
    half = n_iters // 2
    slope = (diag_min[-1] - diag_min[half - 1]) / (n_iters - half)
    tail = diag_min[half:]
    if slope > tol_slope:
        label = "super_critical"
    elif slope < -tol_slope:
        label = "sub_critical"
    else:
        # flat on average: critical, unless the tail still oscillates
        # with an amplitude the flat trend cannot explain
        detrended = tail - slope * np.arange(tail.size)
        label = "critical" if np.ptp(detrended) <= 50 * tol_slope else "indeterminate"
    return ClassificationResult(
        classification=label,
        slope=float(slope),
        shift=float(shift),
        iterations=n_iters,
        diag_tail=tail,
    )
