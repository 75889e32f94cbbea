"""Phase-space barrier by budgeted epsilon-chain shortest paths.

The section t = 0 of the energy-corrected extended phase space is
discretized into cells over (q, p); each cell carries one time-period
flow edge (true orbit of the corrected Hamiltonian, weight = running
action, landing snapped to the containing cell) and zero-weight jump
edges to all cells within distance eps in the product metric
sqrt(dq^2 + dp^2 + dE^2).  A chain alternates optional jumps and flow
edges; its total jump length is capped by eps, discretized into B
budget quanta.  The barrier between two cells is the running minimum,
over horizons past n_min periods, of the minimal chain action, reported
across a decreasing eps schedule.

Cells pin the energy conjugate to time at E = alpha - H(q, p, 0), so
every node sits on the zero level of the corrected conservation law and
the energy obstruction between cells is carried by the dE term of the
jump metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dynamics import circle_dist, flow_many


@dataclass(frozen=True)
class PhaseGrid:
    """nq x np cells over (q, p) in T x [-p_max, p_max); centers at
    q_i = i / nq, p_j = -p_max + j * (2 p_max / np), so q = 0 and p = 0
    are exact centers."""

    nq: int
    np_: int
    p_max: float

    @property
    def dq(self):
        return 1.0 / self.nq

    @property
    def dp(self):
        return 2.0 * self.p_max / self.np_

    @property
    def delta(self):
        """Cell diameter in the (q, p) product metric."""
        return math.hypot(self.dq, self.dp)

    @property
    def n_cells(self):
        return self.nq * self.np_

    def centers(self):
        q = np.arange(self.nq) * self.dq
        p = -self.p_max + np.arange(self.np_) * self.dp
        Q, P = np.meshgrid(q, p, indexing="ij")
        return Q.ravel(), P.ravel()

    def cell_of(self, q, p):
        """Index of the cell containing (q, p), or -1 outside the p window."""
        iq = np.mod(np.round(np.asarray(q) * self.nq).astype(np.int64), self.nq)
        jp = np.round((np.asarray(p) + self.p_max) / self.dp).astype(np.int64)
        ok = (jp >= 0) & (jp < self.np_)
        return np.where(ok, iq * self.np_ + jp, -1)

    def center(self, cell):
        cell = np.asarray(cell)
        return cell // self.np_ * self.dq, -self.p_max + (cell % self.np_) * self.dp


@dataclass
class PhaseGraph:
    grid: PhaseGrid
    model: object
    alpha: float
    K_sub: int
    flow_to: np.ndarray        # landing cell per cell, -1 if orbit escaped
    flow_w: np.ndarray         # one-period running action of L + alpha
    flow_snap: np.ndarray      # metric distance endpoint -> landing center
    H_cells: np.ndarray        # H(center, t=0) per cell
    escaped: np.ndarray
    # fractional-tail edges: partial-period flow used to end a chain
    # mid-period (the normal form of chains allows the last flow
    # segment a fractional overhang)
    tail_src: np.ndarray = None
    tail_tgt: np.ndarray = None
    tail_w: np.ndarray = None
    tail_snap: np.ndarray = None
    _jump_cache: dict = field(default_factory=dict, repr=False)
    _rflow_cache: dict = field(default_factory=dict, repr=False)
    _tail_cache: dict = field(default_factory=dict, repr=False)

    def jumps(self, eps, levels):
        """CSR (by target) jump edges within metric radius eps, with
        budget quanta ceil(D * levels / eps).  Symmetric by construction."""
        key = (round(float(eps), 12), levels)
        if key not in self._jump_cache:
            self._jump_cache[key] = _build_jumps(self.grid, self.H_cells, eps, levels)
        return self._jump_cache[key]

    def flow_csr(self, eps, levels, reverse=False):
        """Flow edges as CSR by landing cell (or by source when
        reversed), with snap budget quanta at this eps; edges whose snap
        exceeds the whole budget are dropped."""
        key = (round(float(eps), 12), levels, reverse)
        if key not in self._rflow_cache:
            self._rflow_cache[key] = _build_flow_csr(self, eps, levels, reverse)
        return self._rflow_cache[key]

    def tail_csr(self, eps, levels, reverse=False):
        """Fractional-tail edges as CSR by landing cell with snap quanta
        at this eps.  Forward chains use them to end mid-period;
        backward (reversed) chains use the transpose, which lets the
        original chain leave its starting cell mid-period."""
        key = (round(float(eps), 12), levels, reverse)
        if key not in self._tail_cache:
            src, tgt = self.tail_src, self.tail_tgt
            if reverse:
                src, tgt = tgt, src
            self._tail_cache[key] = _units_csr(
                self.grid.n_cells, src, tgt, self.tail_w,
                self.tail_snap, eps, levels)
        return self._tail_cache[key]


class BudgetTooCoarse(RuntimeError):
    pass


# snaps below this are integrator roundoff, not genuine jumps
SNAP_FLOOR = 1e-12


def _metric_d(grid, dq_arr, dp_arr, dE_arr):
    return np.sqrt(dq_arr ** 2 + dp_arr ** 2 + dE_arr ** 2)


def _snap_units(snap, eps, levels):
    return np.ceil(np.where(snap > SNAP_FLOOR, snap * levels / eps, 0.0))


def build_phase_graph(model, grid: PhaseGrid, alpha, K_sub=256,
                      K_frac=None) -> PhaseGraph:
    """Integrate one period from every cell center of the alpha-corrected
    extended system and record landing cell, running action and snap
    distance.  Orbits leaving the momentum window are marked escaped and
    carry no flow edge.  Jump edges are materialized lazily per eps.

    Along each orbit, K_frac
    intermediate samples become fractional-tail edges (partial action,
    snap to the containing cell): chains may end mid-period, matching
    the fractional overhang the chain normal form allows on its last
    flow segment.
    """
    if K_frac is None:
        K_frac = min(128, K_sub)
    if K_sub % K_frac:
        raise ValueError("K_frac must divide K_sub")
    Q, P = grid.centers()
    H0 = np.asarray(model.evaluate(Q, P, 0.0), dtype=float)
    E0 = alpha - H0
    margin = 2.0 * grid.dp
    q1, p1, t1, E1, act, escaped, samples = flow_many(
        model, Q, P, 0.0, E0, 1.0, K_sub, alpha=alpha,
        p_bound=grid.p_max + margin, store_every=K_sub // K_frac,
    )
    land = grid.cell_of(q1, p1)
    escaped = escaped | (land < 0)
    land = np.where(escaped, -1, land)
    qc, pc = grid.center(np.maximum(land, 0))
    E_pin = alpha - np.asarray(model.evaluate(qc, pc, 0.0), dtype=float)
    snap = _metric_d(grid, circle_dist(q1, qc), p1 - pc, E1 - E_pin)
    snap = np.where(escaped, np.inf, snap)
    act = np.where(escaped, np.inf, act)

    # fractional-tail edges from the orbit samples (drop the full-period
    # sample: that is the flow edge)
    srcs_all, tgts_all, w_all, snap_all = [], [], [], []
    cell_ids = np.arange(grid.n_cells, dtype=np.int64)
    for qs, ps, As, Es in samples[:-1]:
        tgt = grid.cell_of(qs, ps)
        ok = (tgt >= 0) & ~escaped & np.isfinite(As)
        if not ok.any():
            continue
        tq, tp = grid.center(np.maximum(tgt, 0))
        e_pin = alpha - np.asarray(model.evaluate(tq, tp, 0.0), dtype=float)
        d = _metric_d(grid, circle_dist(qs, tq), ps - tp, Es - e_pin)
        srcs_all.append(cell_ids[ok])
        tgts_all.append(tgt[ok])
        w_all.append(As[ok])
        snap_all.append(d[ok])
    if srcs_all:
        tail_src = np.concatenate(srcs_all)
        tail_tgt = np.concatenate(tgts_all)
        tail_w = np.concatenate(w_all)
        tail_snap = np.concatenate(snap_all)
    else:
        tail_src = np.empty(0, np.int64)
        tail_tgt = np.empty(0, np.int64)
        tail_w = np.empty(0)
        tail_snap = np.empty(0)
    return PhaseGraph(
        grid=grid, model=model, alpha=float(alpha), K_sub=K_sub,
        flow_to=land.astype(np.int32),
        flow_w=act.astype(float),
        flow_snap=snap.astype(float),
        H_cells=H0,
        escaped=escaped,
        tail_src=tail_src, tail_tgt=tail_tgt,
        tail_w=tail_w, tail_snap=tail_snap,
    )


def _units_csr(n_cells, srcs, tgts, w, snap, eps, levels):
    """CSR (by target) of weighted edges whose snap fits the budget at
    this eps."""
    units = _snap_units(snap, eps, levels)
    keep = units <= levels
    s, t = srcs[keep], tgts[keep]
    ww, u = w[keep], units[keep].astype(np.int8)
    order = np.lexsort((s, t))
    s, t, ww, u = s[order], t[order], ww[order], u[order]
    indptr = np.zeros(n_cells + 1, dtype=np.int32)
    np.add.at(indptr, t + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr.astype(np.int32), s.astype(np.int32), ww.astype(float), u


def _build_jumps(grid, H_cells, eps, levels):
    nq, np_ = grid.nq, grid.np_
    dq, dp = grid.dq, grid.dp
    ru = int(math.floor(eps / dq))
    rp = int(math.floor(eps / dp))
    H2 = H_cells.reshape(nq, np_)
    srcs_all, tgts_all, units_all, costs_all = [], [], [], []
    cell_idx = np.arange(grid.n_cells, dtype=np.int64).reshape(nq, np_)
    for di in range(-ru, ru + 1):
        base_q = circle_dist(di * dq, 0.0) if abs(di) * dq <= 0.5 else None
        if base_q is None:
            continue
        for dj in range(-rp, rp + 1):
            if di == 0 and dj == 0:
                continue
            base = math.hypot(min(abs(di) * dq, 1.0 - abs(di) * dq), dj * dp)
            if base > eps:
                continue
            # source (i, j) -> target (i + di mod nq, j + dj)
            src_q = np.arange(nq)
            tgt_q = (src_q + di) % nq
            if dj >= 0:
                src_p = np.arange(0, np_ - dj)
            else:
                src_p = np.arange(-dj, np_)
            tgt_p = src_p + dj
            s = cell_idx[np.ix_(src_q, src_p)].ravel()
            t = cell_idx[np.ix_(tgt_q, tgt_p)].ravel()
            dE = np.abs(H2[np.ix_(tgt_q, tgt_p)] - H2[np.ix_(src_q, src_p)]).ravel()
            cost = np.sqrt(base * base + dE * dE)
            keep = cost <= eps
            if not keep.any():
                continue
            srcs_all.append(s[keep])
            tgts_all.append(t[keep])
            costs_all.append(cost[keep])
            units_all.append(np.ceil(cost[keep] * levels / eps).astype(np.int8))
    if not srcs_all:
        indptr = np.zeros(grid.n_cells + 1, dtype=np.int32)
        return indptr, np.empty(0, np.int32), np.empty(0, np.int8), np.empty(0)
    srcs = np.concatenate(srcs_all)
    tgts = np.concatenate(tgts_all)
    units = np.concatenate(units_all)
    costs = np.concatenate(costs_all)
    order = np.lexsort((srcs, tgts))
    srcs, tgts, units, costs = srcs[order], tgts[order], units[order], costs[order]
    indptr = np.zeros(grid.n_cells + 1, dtype=np.int32)
    np.add.at(indptr, tgts + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr.astype(np.int32), srcs.astype(np.int32), units, costs


def _build_flow_csr(graph, eps, levels, reverse):
    grid = graph.grid
    valid = ~graph.escaped
    units_f = np.full(grid.n_cells, levels + 1, dtype=np.int64)
    snap = graph.flow_snap[valid]
    units_f[valid] = _snap_units(snap, eps, levels).astype(np.int64)
    usable = valid & (units_f <= levels)
    srcs = np.flatnonzero(usable).astype(np.int64)
    tgts = graph.flow_to[srcs].astype(np.int64)
    w = graph.flow_w[srcs]
    units = units_f[srcs].astype(np.int8)
    if reverse:
        srcs, tgts = tgts, srcs
    order = np.lexsort((srcs, tgts))
    srcs, tgts, w, units = srcs[order], tgts[order], w[order], units[order]
    indptr = np.zeros(grid.n_cells + 1, dtype=np.int32)
    np.add.at(indptr, tgts + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr.astype(np.int32), srcs.astype(np.int32), w.astype(float), units


@dataclass(frozen=True)
class ChainTable:
    """Budgeted chain values from (or to) one source cell at one eps:
    running minimum, over horizons in [n_min, n_stop], of the minimal
    chain action per target cell and budget level."""

    source: int
    eps: float
    levels: int
    values: np.ndarray          # (cells,) min over budget levels
    per_level: np.ndarray       # (cells, levels + 1) running min per spent quanta
    budget_bins: np.ndarray     # spent quanta at the optimum, -1 if unreachable
    n_stop: int
    converged: bool
    reverse: bool


def budget_value_iteration(graph: PhaseGraph, eps, source, n_min=None,
                           n_max=None, window=16, tol_fix=1e-6, levels=8,
                           reverse=False) -> ChainTable:
    """Value-iterate minimal chain action from a source cell over mixed
    flow/jump stages with a per-chain jump budget <= eps (B quanta).

    Horizon n counts flow edges; values are recorded after the jump
    pass, so chains may open and close with a jump, and (in the forward
    direction) additionally through a fractional-tail edge, so they may
    end mid-period.  The running minimum starts at n_min and stops once
    it is stable to tol_fix for `window` consecutive horizons (or at
    n_max).
    """
    grid = graph.grid
    C = grid.n_cells
    if n_min is None:
        n_min = max(grid.nq, grid.np_)
    if n_max is None:
        n_max = n_min + 4 * window + 64
    j_indptr, j_srcs, j_units, _ = graph.jumps(eps, levels)
    f_indptr, f_srcs, f_w, f_units = graph.flow_csr(eps, levels, reverse=reverse)
    tail = graph.tail_csr(eps, levels, reverse=reverse)

    V = np.full((C, levels + 1), np.inf)
    V[source, 0] = 0.0
    R = np.full((C, levels + 1), np.inf)
    stall = 0
    n = 0
    while n < n_max:
        Vj = kernels.budget_jump_relax(V, j_indptr, j_srcs, j_units)
        if n >= n_min:
            rec = Vj
            if tail is not None and tail[1].size:
                rec = np.minimum(rec, kernels.budget_flow_apply(Vj, *tail))
            dropped = rec < R - tol_fix
            np.minimum(R, rec, out=R)
            stall = 0 if dropped.any() else stall + 1
            if stall >= window:
                n += 1
                break
        V = kernels.budget_flow_apply(Vj, f_indptr, f_srcs, f_w, f_units)
        n += 1
    values = R.min(axis=1)
    bins = np.where(np.isfinite(values), R.argmin(axis=1), -1).astype(np.int32)
    return ChainTable(
        source=int(source), eps=float(eps), levels=levels,
        values=values, per_level=R, budget_bins=bins, n_stop=n,
        converged=stall >= window, reverse=reverse,
    )


@dataclass(frozen=True)
class PhaseBarrierEstimate:
    """Barrier value between two cells across the eps schedule.

    Values are non-increasing in eps (more chains available).  The
    reported value is the entry at the smallest eps that is finite and
    consistent with the coarser entries (within trend_slack): below the
    grid's chain-resolution floor the restricted chain class loses the
    minimizing structure, which shows up as a sudden jump in the trend
    and triggers a fallback to the previous entry."""

    source: int
    target: int
    schedule: tuple
    per_eps: tuple              # value per schedule entry
    budget_used: tuple          # spent quanta per entry (-1 if infinite)
    value: float
    reported_eps: float
    converged: bool


def reported_entry(per_eps, trend_slack):
    """Index of the smallest-eps entry consistent with the trend."""
    idx = 0
    for i in range(1, len(per_eps)):
        if math.isfinite(per_eps[i]) and per_eps[i] <= per_eps[idx] + trend_slack:
            idx = i
    return idx


def phase_barrier(graph: PhaseGraph, schedule, x0, x1, n_min=None, n_max=None,
                  window=16, tol_fix=1e-6, levels=8, tol_energy=1e-6,
                  value_step=0.1, trend_slack=0.1, tables=None) -> PhaseBarrierEstimate:
    """Chain barrier from cell x0 to cell x1 over a decreasing eps
    schedule.  Escaped cells are rejected; cells off the corrected
    energy level are +inf by the conservation obstruction, which the dE
    jump metric enforces automatically.

    If the value drops by more than value_step across the last budget
    quantum, the discretization is considered too coarse and the run is
    retried once with twice the levels.
    """
    if graph.escaped[x0] or graph.escaped[x1]:
        raise ValueError("barrier query on an escaped (absorbing-invalid) cell")
    tables = tables if tables is not None else {}
    per_eps, budgets, conv = [], [], []
    for eps in schedule:
        lv = levels
        for attempt in range(2):
            key = (x0, round(float(eps), 12), False, lv)
            tab = tables.get(key)
            if tab is None:
                tab = budget_value_iteration(graph, eps, x0, n_min=n_min,
                                             n_max=n_max, window=window,
                                             tol_fix=tol_fix, levels=lv)
                tables[key] = tab
            val = float(tab.values[x1])
            # budget-coarseness probe: if the running min still drops by
            # more than value_step across the last spent quantum, the
            # discretization is too coarse; retry once at twice the levels
            b = int(tab.budget_bins[x1])
            if (attempt == 0 and np.isfinite(val) and b >= 1
                    and float(tab.per_level[x1, b - 1]) - val > value_step):
                lv = 2 * lv
                continue
            break
        per_eps.append(val)
        budgets.append(int(tab.budget_bins[x1]))
        conv.append(tab.converged)
    idx = reported_entry(per_eps, trend_slack)
    return PhaseBarrierEstimate(
        source=int(x0), target=int(x1), schedule=tuple(float(e) for e in schedule),
        per_eps=tuple(per_eps), budget_used=tuple(budgets),
        value=per_eps[idx], reported_eps=float(schedule[idx]),
        converged=conv[idx],
    )


def phase_barrier_all(graph: PhaseGraph, schedule, x0, n_min=None, n_max=None,
                      window=16, tol_fix=1e-6, levels=8, trend_slack=0.1,
                      tables=None):
    """Reported barrier values from x0 to every cell at once; returns
    (values, reported_eps_index, per_eps_matrix)."""
    tables = tables if tables is not None else {}
    cols = []
    for eps in schedule:
        key = (x0, round(float(eps), 12), False, levels)
        tab = tables.get(key)
        if tab is None:
            tab = budget_value_iteration(graph, eps, x0, n_min=n_min, n_max=n_max,
                                         window=window, tol_fix=tol_fix,
                                         levels=levels)
            tables[key] = tab
        cols.append(tab.values)
    per = np.column_stack(cols)
    idx = np.zeros(per.shape[0], dtype=np.int64)
    for i in range(1, per.shape[1]):
        ok = np.isfinite(per[:, i]) & (per[:, i] <= per[np.arange(per.shape[0]), idx] + trend_slack)
        idx[ok] = i
    values = per[np.arange(per.shape[0]), idx]
    return values, idx, per


def symplectic_aubry_set(graph: PhaseGraph, eps, tol_diag, tol_energy=1e-6,
                         n_min=None, window=16, tol_fix=1e-9, levels=8):
    """Cells with chain-recurrent, zero-action structure:
    h~(X, X) <= tol_diag on the corrected energy level.

    Corrected flow weights are nonnegative for the built-in convex
    models, so a recurrent chain of total action <= tol_diag can only
    launch flow edges of weight <= tol_diag.  All long-horizon activity
    therefore happens inside the small "core" (cheap launch cells plus
    their landing cells); the scan computes budget-resolved all-pairs
    chain values on the core once and composes each candidate cell's
    entry/exit jumps against them.
    """
    grid = graph.grid
    if n_min is None:
        n_min = max(grid.nq, grid.np_)
    w = np.where(graph.escaped, np.inf, graph.flow_w)
    if float(np.min(w)) < -1e-9:
        import warnings
        warnings.warn("negative corrected flow weights; cheap-subgraph Aubry scan "
                      "is only a lower inclusion in this regime")
    cheap = (~graph.escaped) & (w <= tol_diag) & (graph.flow_snap <= eps)
    core = np.unique(np.concatenate([
        np.flatnonzero(cheap),
        graph.flow_to[cheap],
    ]))
    if core.size == 0:
        return np.array([], dtype=np.int64)
    M, core = _core_tables(graph, eps, core, cheap, n_min, window,
                           tol_fix, levels)
    pos = {int(c): i for i, c in enumerate(core)}
    launch = np.array([cheap[c] for c in core])

    # candidates: core plus every cell with a jump edge into the core
    j_indptr, j_srcs, j_units, j_costs = graph.jumps(eps, levels)
    tgts = np.repeat(np.arange(grid.n_cells), np.diff(j_indptr))
    in_core = np.zeros(grid.n_cells, dtype=bool)
    in_core[core] = True
    cand = in_core.copy()
    cand[j_srcs[in_core[tgts]]] = True
    cand &= ~graph.escaped

    # jump quanta candidate -> core and core -> candidate (symmetric)
    members = []
    cells = np.flatnonzero(cand)
    jump_u = {}
    sel = in_core[tgts]
    for s, t, u in zip(j_srcs[sel], tgts[sel], j_units[sel]):
        jump_u[(int(s), int(t))] = int(u)
    for x in cells:
        best = math.inf
        for c1 in core:
            if not launch[pos[int(c1)]]:
                continue
            u_in = 0 if x == c1 else jump_u.get((int(x), int(c1)))
            if u_in is None:
                continue
            for c2 in core:
                # jump edges are symmetric: units(c2 -> x) = units(x -> c2)
                u_out = 0 if x == c2 else jump_u.get((int(x), int(c2)))
                if u_out is None:
                    continue
                cap = levels - u_in - u_out
                if cap < 0:
                    continue
                v = M[pos[int(c1)], pos[int(c2)], cap]
                if v < best:
                    best = v
        if best <= tol_diag:
            members.append(int(x))
    return np.array(sorted(members), dtype=np.int64)


def _core_tables(graph, eps, core, cheap, n_min, window, tol_fix, levels):
    """Budget-resolved all-pairs chain values restricted to the core:
    M[i, j, b] = minimal action of a chain core[i] -> core[j] with
    horizon >= n_min using at most b quanta (cummin over b applied)."""
    grid = graph.grid
    m = core.size
    pos = np.full(grid.n_cells, -1, dtype=np.int64)
    pos[core] = np.arange(m)
    # core-restricted jump edges
    j_indptr, j_srcs, j_units, _ = graph.jumps(eps, levels)
    tgts = np.repeat(np.arange(grid.n_cells), np.diff(j_indptr))
    sel = (pos[j_srcs] >= 0) & (pos[tgts] >= 0)
    js, jt, ju = pos[j_srcs[sel]], pos[tgts[sel]], j_units[sel]
    order = np.lexsort((js, jt))
    js, jt, ju = js[order], jt[order], ju[order]
    ji = np.zeros(m + 1, dtype=np.int32)
    np.add.at(ji, jt + 1, 1)
    np.cumsum(ji, out=ji)
    # core-restricted flow edges (launch from cheap only)
    fsrc = np.flatnonzero(cheap)
    fl = graph.flow_to[fsrc]
    keepf = pos[fl] >= 0
    fsrc, fl = fsrc[keepf], fl[keepf]
    units_f = _snap_units(graph.flow_snap[fsrc], eps, levels).astype(np.int64)
    keepu = units_f <= levels
    fsrc, fl, units_f = fsrc[keepu], fl[keepu], units_f[keepu]
    fs, ft = pos[fsrc], pos[fl]
    fw = graph.flow_w[fsrc]
    order = np.lexsort((fs, ft))
    fs, ft, fw, fu = fs[order], ft[order], fw[order], units_f[order].astype(np.int8)
    fi = np.zeros(m + 1, dtype=np.int32)
    np.add.at(fi, ft + 1, 1)
    np.cumsum(fi, out=fi)

    n_max = n_min + 4 * window + 64
    M = np.empty((m, m, levels + 1))
    for i in range(m):
        V = np.full((m, levels + 1), np.inf)
        V[i, 0] = 0.0
        R = np.full((m, levels + 1), np.inf)
        stall = 0
        n = 0
        while n < n_max and stall < window:
            Vj = kernels.budget_jump_relax(
                V, ji, js.astype(np.int32), ju.astype(np.int8))
            if n >= n_min:
                dropped = Vj < R - tol_fix
                np.minimum(R, Vj, out=R)
                stall = 0 if dropped.any() else stall + 1
            V = kernels.budget_flow_apply(
                Vj, fi, fs.astype(np.int32), fw.astype(float), fu)
            n += 1
        M[i] = np.minimum.accumulate(R, axis=1)
    return M, core


def symplectic_mane_set(graph: PhaseGraph, eps, aubry_cells, tol_gap,
                        n_min=None, n_max=None, window=16, tol_fix=1e-6,
                        levels=8, tables=None):
    """Cells X with Aubry witnesses X0, X1 such that
    h~(X0, X) + h~(X, X1) <= h~(X0, X1) + tol_gap, computed from one
    forward table per witness source and one backward table per witness
    target."""
    tables = tables if tables is not None else {}
    fwd, bwd = {}, {}
    for a in aubry_cells:
        key = (int(a), round(float(eps), 12), False, levels)
        if key not in tables:
            tables[key] = budget_value_iteration(graph, eps, int(a), n_min=n_min,
                                                 n_max=n_max, window=window,
                                                 tol_fix=tol_fix, levels=levels)
        fwd[int(a)] = tables[key]
        keyr = (int(a), round(float(eps), 12), True, levels)
        if keyr not in tables:
            tables[keyr] = budget_value_iteration(graph, eps, int(a), n_min=n_min,
                                                  n_max=n_max, window=window,
                                                  tol_fix=tol_fix, levels=levels,
                                                  reverse=True)
        bwd[int(a)] = tables[keyr]
    C = graph.grid.n_cells
    defects = np.full(C, np.inf)
    wit = np.full((C, 2), -1, dtype=np.int64)
    for a0 in aubry_cells:
        for a1 in aubry_cells:
            base = float(fwd[int(a0)].values[int(a1)])
            if not np.isfinite(base):
                continue
            cand = fwd[int(a0)].values + bwd[int(a1)].values - base
            better = cand < defects
            defects[better] = cand[better]
            wit[better, 0] = int(a0)
            wit[better, 1] = int(a1)
    cells = np.flatnonzero(defects <= tol_gap)
    witnesses = {int(c): (int(wit[c, 0]), int(wit[c, 1])) for c in cells}
    return cells, witnesses, defects


def symplectic_mather_set(graph: PhaseGraph, aubry_cells, tol=1e-9):
    """Aubry cells whose one-period flow edge returns to the Aubry set
    with negligible action and snap: the discrete stand-in for supports
    of invariant minimizing measures inside the Aubry set."""
    aset = set(int(a) for a in aubry_cells)
    out = []
    for a in aset:
        t = int(graph.flow_to[a])
        if t in aset and graph.flow_w[a] <= tol and graph.flow_snap[a] <= tol:
            out.append(a)
    return np.array(sorted(out), dtype=np.int64)


def static_classes_phase(graph: PhaseGraph, eps, aubry_cells, tol_class,
                         n_min=None, n_max=None, window=16, tol_fix=1e-6,
                         levels=8, tables=None):
    """Partition of the symplectic Aubry cells by vanishing symmetrized
    chain barrier; the quotient metric may contain +inf."""
    cells = [int(a) for a in aubry_cells]
    tables = tables if tables is not None else {}
    vals = {}
    for a in cells:
        key = (a, round(float(eps), 12), False, levels)
        if key not in tables:
            tables[key] = budget_value_iteration(graph, eps, a, n_min=n_min,
                                                 n_max=n_max, window=window,
                                                 tol_fix=tol_fix, levels=levels)
        vals[a] = tables[key].values
    m = len(cells)
    d = np.zeros((m, m))
    for i, a in enumerate(cells):
        for j, b in enumerate(cells):
            if i != j:
                d[i, j] = vals[a][b] + vals[b][a]
    parent = list(range(m))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(m):
        for j in range(i + 1, m):
            if d[i, j] <= tol_class:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    roots = sorted({find(i) for i in range(m)})
    classes = [[cells[i] for i in range(m) if find(i) == r] for r in roots]
    c = len(classes)
    quotient = np.zeros((c, c))
    for x in range(c):
        for y in range(c):
            if x != y:
                quotient[x, y] = min(
                    d[cells.index(u), cells.index(v)]
                    for u in classes[x] for v in classes[y]
                )
    return classes, quotient


def biasymptotic_check(graph: PhaseGraph, mane_cell, aubry_cells, T_max=50,
                       substeps_per_period=64):
    """Integrate the orbit of the cell center forward and backward for
    T_max periods; return the minimal distance of each tail (last 10%
    of samples) to the Aubry cell rectangles.  Escaped orbits are
    reported as inf."""
    grid = graph.grid
    q0, p0 = grid.center(int(mane_cell))
    E0 = graph.alpha - float(graph.model.evaluate(q0, p0, 0.0))
    aq, ap = grid.center(np.asarray(list(aubry_cells), dtype=np.int64))
    out = []
    for sgn in (+1.0, -1.0):
        q, p, t, E, A, esc, samples = flow_many(
            graph.model, np.array([q0]), np.array([p0]), 0.0, E0,
            sgn * T_max, int(T_max * substeps_per_period), alpha=graph.alpha,
            p_bound=4.0 * grid.p_max, store_every=max(1, substeps_per_period // 8),
        )
        if esc.any():
            out.append(math.inf)
            continue
        qs = np.array([smp[0][0] for smp in samples])
        ps = np.array([smp[1][0] for smp in samples])
        tail = slice(int(0.9 * len(qs)), None)
        dq = circle_dist(qs[tail][:, None], aq[None, :])
        dp = np.abs(ps[tail][:, None] - ap[None, :])
        # distance to the cell rectangle, not just its center
        dqr = np.maximum(dq - 0.5 * grid.dq, 0.0)
        dpr = np.maximum(dp - 0.5 * grid.dp, 0.0)
        out.append(float(np.hypot(dqr, dpr).min()))
    return out[0], out[1]


def phase_growth_slope(graph: PhaseGraph, eps, n_iters=64, levels=8):
    """Per-step growth of the global minimum chain value started from
    every cell at once: the raw-Hamiltonian trichotomy diagnostic (no
    alpha correction applied when the graph was built that way)."""
    grid = graph.grid
    j_indptr, j_srcs, j_units, _ = graph.jumps(eps, levels)
    f = graph.flow_csr(eps, levels)
    V = np.full((grid.n_cells, levels + 1), np.inf)
    V[:, 0] = 0.0
    mins = []
    for _ in range(n_iters):
        Vj = kernels.budget_jump_relax(V, j_indptr, j_srcs, j_units)
        V = kernels.budget_flow_apply(Vj, *f)
        mins.append(float(V.min()))
    mins = np.array(mins)
    half = n_iters // 2
    return float((mins[-1] - mins[half - 1]) / (n_iters - half)), mins


def verify_flow_edges(graph: PhaseGraph, n_samples=32, rng=None, tol_flow=1e-6):
    """Recompute a sample of flow edges at twice the substeps; returns
    the worst action discrepancy (graph invariant check)."""
    rng = rng or np.random.default_rng(0)
    valid = np.flatnonzero(~graph.escaped)
    take = rng.choice(valid, size=min(n_samples, valid.size), replace=False)
    grid = graph.grid
    q0, p0 = grid.center(take)
    E0 = graph.alpha - np.asarray(graph.model.evaluate(q0, p0, 0.0))
    _, _, _, _, act, esc, _ = flow_many(graph.model, q0, p0, 0.0, E0, 1.0,
                                        2 * graph.K_sub, alpha=graph.alpha,
                                        p_bound=grid.p_max + 2 * grid.dp)
    return float(np.abs(act - graph.flow_w[take]).max())
