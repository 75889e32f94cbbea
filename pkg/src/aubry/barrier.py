"""Peierls barrier by normalized min-plus value iteration with running
minima, and the objects read off it: projected/lifted Aubry set,
Mather set, Mane set, the symmetrized pseudo-metric d, static classes,
and the quotient metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from . import kernels
from .action import ActionKernel
from .critical import CriticalResult


class UnconvergedError(RuntimeError):
    """A computation that must converge before use did not."""


@dataclass(frozen=True)
class BarrierTable:
    grid: object
    h: np.ndarray
    alpha_used: float
    iterations: int
    converged: bool
    stabilization_window: int
    tol_fix: float
    max_last_decrement: float

    @property
    def n(self):
        return self.h.shape[0]


@dataclass(frozen=True)
class AubryData:
    projected: np.ndarray          # node indices
    momenta: np.ndarray            # one momentum per projected node
    lifted: np.ndarray             # rows (q, p, t0, E)
    flagged: np.ndarray            # nodes where a kink forced a one-sided difference


@dataclass(frozen=True)
class StaticClassPartition:
    classes: List[List[int]]
    quotient_metric: np.ndarray


def peierls_barrier(kernel: ActionKernel, alpha, n_min=None, n_max=None,
                    window=32, tol_fix=1e-6, threads=1) -> BarrierTable:
    """h = running elementwise minimum of the min-plus powers of the
    critical kernel B = A + alpha, from horizon n_min onward.

    Converged means the running minimum decreased nowhere by more than
    tol_fix for `window` consecutive horizons.  An unconverged table is
    returned with converged=False and the last window's decrement.
    """
    A = kernel.A
    n = A.shape[0]
    if n_min is None:
        n_min = n
    if n_max is None:
        n_max = 12 * n
    B = A + alpha
    V = B.copy()
    horizon = 1
    while horizon < n_min:
        V = kernels.minplus_matmul(V, B, threads)
        horizon += 1
    h = V.copy()
    stall = 0
    last_dec = np.inf
    while horizon < n_max and stall < window:
        V = kernels.minplus_matmul(V, B, threads)
        horizon += 1
        last_dec = float(np.maximum(h - V, 0.0).max())
        np.minimum(h, V, out=h)
        stall = stall + 1 if last_dec <= tol_fix else 0
    return BarrierTable(
        grid=kernel.grid,
        h=h,
        alpha_used=float(alpha),
        iterations=horizon,
        converged=stall >= window,
        stabilization_window=window,
        tol_fix=tol_fix,
        max_last_decrement=last_dec,
    )


def weak_kam_residual(table: BarrierTable, kernel: ActionKernel, alpha=None,
                      threads=1):
    """max |h - h (x) B| with B the critical kernel: the discrete
    one-period minimization identity of a weak KAM solution."""
    if alpha is None:
        alpha = table.alpha_used
    B = kernel.A + alpha
    hb = kernels.minplus_matmul(table.h, B, threads)
    return float(np.abs(table.h - hb).max())


def triangle_defect(h):
    """max over (i, j, k) of h[i][k] - h[i][j] - h[j][k]."""
    n = h.shape[0]
    worst = -np.inf
    for j in range(n):
        # defect for all (i, k) through this j
        d = h - (h[:, j][:, None] + h[j][None, :])
        worst = max(worst, float(d.max()))
    return worst


def projected_aubry_set(table: BarrierTable, tol_diag):
    """Nodes with h[i][i] <= tol_diag.  Empty output means tol_diag sits
    below the discretization error of the diagonal; re-tolerance."""
    if not table.converged:
        raise UnconvergedError("barrier table not converged; refuse set extraction")
    nodes = np.flatnonzero(table.h.diagonal() <= tol_diag)
    if nodes.size == 0:
        raise ValueError(
            f"empty projected Aubry set at tol_diag={tol_diag:g}; "
            f"diagonal minimum is {table.h.diagonal().min():g}, raise tol_diag"
        )
    return nodes


def aubry_momenta(table: BarrierTable, kernel: ActionKernel, model,
                  tol_diag, kink_factor=8.0) -> AubryData:
    """Lifted Aubry set: momentum at node i is the centered finite
    difference of h[i][.] at the diagonal; nodes where the one-sided
    differences disagree badly are flagged and get the flatter side."""
    nodes = projected_aubry_set(table, tol_diag)
    n = table.n
    step = 1.0 / n
    h = table.h
    momenta = np.empty(nodes.size)
    flagged = np.zeros(nodes.size, dtype=bool)
    for k, i in enumerate(nodes):
        right = (h[i, (i + 1) % n] - h[i, i]) / step
        left = (h[i, i] - h[i, (i - 1) % n]) / step
        # A convex corner (left <= right, e.g. the diagonal cone at an
        # Aubry node) still has the centered difference as the right
        # derivative surrogate; only a concave corner marks a genuine
        # kink of the minimizing structure.
        if right - left < -(kink_factor * step + 0.25 * (abs(left) + abs(right))):
            flagged[k] = True
            momenta[k] = left if abs(left) < abs(right) else right
        else:
            momenta[k] = 0.5 * (left + right)
    q = nodes * step
    t0 = table.grid.section_time
    E = -np.asarray(model.evaluate(q, momenta, t0), dtype=float)
    lifted = np.column_stack([q, momenta, np.full(nodes.size, t0), E])
    return AubryData(projected=nodes, momenta=momenta, lifted=lifted, flagged=flagged)


def mane_set(table: BarrierTable, tol_gap, aubry_nodes=None, tol_diag=None):
    """Nodes j admitting Aubry witnesses i0, i1 with
    h[i0][j] + h[j][i1] <= h[i0][i1] + tol_gap, with the witness pair
    and the defect recorded per node."""
    if aubry_nodes is None:
        aubry_nodes = projected_aubry_set(table, tol_diag)
    h = table.h
    a = np.asarray(aubry_nodes)
    n = table.n
    # defect[j] = min over (i0, i1) of h[i0, j] + h[j, i1] - h[i0, i1]
    left = h[a, :]                      # (A, n): h[i0, j]
    right = h[:, a]                     # (n, A): h[j, i1]
    cross = h[np.ix_(a, a)]             # (A, A)
    defects = np.full(n, np.inf)
    wit0 = np.zeros(n, dtype=np.int64)
    wit1 = np.zeros(n, dtype=np.int64)
    for k0 in range(a.size):
        cand = left[k0][:, None] + right - cross[k0][None, :]   # (n, A)
        k1 = cand.argmin(axis=1)
        val = cand[np.arange(n), k1]
        better = val < defects
        defects[better] = val[better]
        wit0[better] = a[k0]
        wit1[better] = a[k1[better]]
    nodes = np.flatnonzero(defects <= tol_gap)
    witnesses = {int(j): (int(wit0[j]), int(wit1[j])) for j in nodes}
    return nodes, witnesses, defects


def mane_momenta(table: BarrierTable, witnesses, kink_factor=8.0,
                 sources=None, aubry_nodes=None, tol_gap=None):
    """Momenta along the Mane set: finite differences of h[i0][.] at
    each member node.  At kink nodes (the two one-sided slopes disagree)
    both one-sided momenta are returned, since the minimizing momentum
    field is double-valued there at grid scale.

    Both the arrival field (slope of h[i0][.] at the node) and the
    departure field (negated slope of h[.][i1]) are emitted: on the
    invariant set itself they agree, but members included at tolerance
    carry the connecting branches of both directions.  With `sources`
    (one Aubry representative per static class), every representative
    whose own witness defect at the node stays within tol_gap
    contributes as well, so the union does not depend on which witness
    pair happened to win the argmin."""
    h = table.h
    n = table.n
    step = 1.0 / n

    def slopes(values, j, sign):
        right = (values[(j + 1) % n] - values[j]) / step
        left = (values[j] - values[(j - 1) % n]) / step
        if right - left < -(kink_factor * step + 0.25 * (abs(left) + abs(right))):
            # concave corner: the minimizing momentum field is
            # double-valued here at grid scale, emit both branches
            return [sign * left, sign * right]
        return [sign * 0.5 * (left + right)]

    out: Dict[int, List[float]] = {}
    a = np.asarray(aubry_nodes) if aubry_nodes is not None else None
    for j, (i0, i1) in witnesses.items():
        node_sources = {int(i0), int(i1)}
        if sources is not None and a is not None and tol_gap is not None:
            for r in sources:
                defect = float((h[r, j] + h[j, a] - h[r, a]).min())
                if defect <= tol_gap:
                    node_sources.add(int(r))
        moms: List[float] = []
        for s in sorted(node_sources):
            for p in slopes(h[s, :], j, +1.0) + slopes(h[:, s], j, -1.0):
                if all(abs(p - q) > 2 * step for q in moms):
                    moms.append(p)
        out[j] = sorted(moms)
    return out


def mather_set(table: BarrierTable, critical: CriticalResult,
               kernel: ActionKernel, tol, aubry_nodes=None, tol_diag=None):
    """Aubry nodes on a zero-mean cycle of the critical kernel
    restricted to the Aubry set: edges where the one-period action is
    h-consistent (A_c[i][j] close to h[i][j]) and the symmetrized
    barrier vanishes; nodes on directed cycles of that subgraph."""
    if aubry_nodes is None:
        aubry_nodes = projected_aubry_set(table, tol_diag)
    a = np.asarray(aubry_nodes)
    h = table.h
    Ac = kernel.A + table.alpha_used
    sub_ac = Ac[np.ix_(a, a)]
    sub_h = h[np.ix_(a, a)]
    d = sub_h + sub_h.T
    edges = (sub_ac <= sub_h + tol) & (d <= tol)
    on_cycle = _nodes_on_cycles(edges)
    return a[on_cycle]


def _nodes_on_cycles(adj):
    """Indices that lie on some directed cycle of a dense boolean
    adjacency matrix: members of a strongly connected component that
    contains at least one edge (including self-loops)."""
    m = adj.shape[0]
    comp = np.full(m, -1)
    order = []
    visited = np.zeros(m, dtype=bool)

    def dfs(start, graph, out):
        stack = [(start, iter(np.flatnonzero(graph[start])))]
        visited[start] = True
        while stack:
            v, it = stack[-1]
            advanced = False
            for w in it:
                if not visited[w]:
                    visited[w] = True
                    stack.append((w, iter(np.flatnonzero(graph[w]))))
                    advanced = True
                    break
            if not advanced:
                stack.pop()
                out.append(v)

    for v in range(m):
        if not visited[v]:
            dfs(v, adj, order)
    visited[:] = False
    label = 0
    comp_members = []
    for v in reversed(order):
        if not visited[v]:
            members = []
            dfs(v, adj.T, members)
            for u in members:
                comp[u] = label
            comp_members.append(members)
            label += 1
    keep = np.zeros(m, dtype=bool)
    for members in comp_members:
        if len(members) > 1:
            keep[members] = True
        else:
            v = members[0]
            if adj[v, v]:
                keep[v] = True
    return keep


def static_classes(table: BarrierTable, aubry_nodes, tol_class) -> StaticClassPartition:
    """Union-find over Aubry nodes with an edge when the symmetrized
    barrier d = h + h^T vanishes at tolerance; quotient metric is the
    minimum of d over class representatives."""
    a = np.asarray(aubry_nodes)
    h = table.h
    d = h[np.ix_(a, a)] + h[np.ix_(a, a)].T
    parent = list(range(a.size))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(a.size):
        for j in range(i + 1, a.size):
            if d[i, j] <= tol_class:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    roots = sorted({find(i) for i in range(a.size)})
    classes = [[int(a[i]) for i in range(a.size) if find(i) == r] for r in roots]
    c = len(classes)
    quotient = np.zeros((c, c))
    for x in range(c):
        for y in range(c):
            if x == y:
                continue
            ix = [int(np.searchsorted(a, node)) for node in classes[x]]
            iy = [int(np.searchsorted(a, node)) for node in classes[y]]
            quotient[x, y] = d[np.ix_(ix, iy)].min()
    return StaticClassPartition(classes=classes, quotient_metric=quotient)
