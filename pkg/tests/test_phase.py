"""Phase-space chain barrier: graph construction, budgeted iteration,
set extraction, biasymptotics."""

import math

import numpy as np
import pytest

from aubry.dynamics import circle_dist, double_well, free_particle, pendulum
from aubry.phase import (PhaseGrid, biasymptotic_check, budget_value_iteration,
                         build_phase_graph, phase_barrier, phase_barrier_all,
                         phase_growth_slope, static_classes_phase,
                         symplectic_aubry_set, symplectic_mane_set,
                         symplectic_mather_set, verify_flow_edges)
from aubry.symplectic import cosine_shift, pullback_hamiltonian


@pytest.fixture(scope="module")
def free_graph():
    grid = PhaseGrid(16, 16, 1.0)
    return build_phase_graph(free_particle(), grid, alpha=0.0, K_sub=64)


@pytest.fixture(scope="module")
def pend_graph():
    grid = PhaseGrid(64, 64, 3.0)
    return build_phase_graph(pendulum(), grid, alpha=1.0, K_sub=128)


def test_grid_geometry():
    grid = PhaseGrid(16, 16, 1.0)
    assert grid.dq == pytest.approx(1 / 16)
    assert grid.dp == pytest.approx(1 / 8)
    q, p = grid.center(grid.cell_of(0.0, 0.0))
    assert (q, p) == (0.0, 0.0)
    assert grid.cell_of(0.0, 5.0) == -1


def test_free_particle_flow_edges(free_graph):
    g = free_graph
    grid = g.grid
    c = grid.cell_of(0.3125, 0.0)
    # rest orbit: exact self loop with zero action
    assert g.flow_to[c] == c
    assert g.flow_w[c] == 0.0
    assert g.flow_snap[c] == 0.0
    # p = 0.125 translates by exactly two cells, action p^2/2
    c2 = grid.cell_of(0.25, 0.125)
    assert g.flow_to[c2] == grid.cell_of(0.375, 0.125)
    assert g.flow_w[c2] == pytest.approx(0.125 ** 2 / 2, abs=1e-12)
    assert g.flow_snap[c2] == pytest.approx(0.0, abs=1e-12)


def test_pendulum_equilibrium_and_separatrix_edges(pend_graph):
    g = pend_graph
    grid = g.grid
    sc = grid.cell_of(0.0, 0.0)
    assert g.flow_to[sc] == sc
    assert g.flow_w[sc] == 0.0 and g.flow_snap[sc] == 0.0
    # a cell on the analytic critical level lands within a cell of it
    c = grid.cell_of(0.25, 2 * math.sin(math.pi * 0.25))
    land = g.flow_to[c]
    ql, pl = grid.center(land)
    assert abs(abs(pl) - 2 * math.sin(math.pi * ql)) <= 2.5 * grid.dp
    # recomputing actions at twice the substeps changes them negligibly
    assert verify_flow_edges(g, n_samples=24) <= 1e-6


def test_free_particle_aubry_rest_orbits(free_graph):
    g = free_graph
    au = symplectic_aubry_set(g, g.grid.delta, tol_diag=2 * g.grid.delta ** 2,
                              n_min=16)
    Q, P = g.grid.center(au)
    assert au.size == 16
    assert np.all(P == 0.0)


def test_free_particle_mane_and_classes(free_graph):
    g = free_graph
    grid = g.grid
    eps = grid.delta
    au = symplectic_aubry_set(g, eps, tol_diag=2 * grid.delta ** 2, n_min=16)
    tables = {}
    cells, wits, defects = symplectic_mane_set(g, eps, au, tol_gap=0.05,
                                               n_min=16, tables=tables)
    Q, P = grid.center(cells)
    # Aubry (p = 0) is contained; everything stays within one jump of it
    assert set(au) <= set(cells)
    assert np.abs(P).max() <= eps
    classes, quot = static_classes_phase(g, eps, au, tol_class=0.1, n_min=16,
                                         tables=tables)
    assert len(classes) == 1
    assert quot.size == 0 or quot.max() == 0.0
    mather = symplectic_mather_set(g, au)
    assert np.array_equal(mather, au)  # rest orbits are invariant


def test_pendulum_phase_barrier_values(pend_graph):
    g = pend_graph
    grid = g.grid
    sc = int(grid.cell_of(0.0, 0.0))
    eps = 4 * grid.delta
    tab = budget_value_iteration(g, eps, sc, n_min=64, window=16, levels=8)
    assert tab.converged
    # self barrier vanishes
    assert tab.values[sc] == 0.0
    # on-separatrix targets match the configuration barrier (Maupertuis)
    for q in (0.25, 0.5, 0.75):
        x = int(grid.cell_of(q, 2 * math.sin(math.pi * q)))
        cont = 2 / math.pi * (1 - math.cos(math.pi * q))
        assert tab.values[x] == pytest.approx(cont, abs=0.06)
    # off the critical level: the conservation obstruction makes the
    # barrier infinite
    assert math.isinf(tab.values[int(grid.cell_of(0.5, 0.0))])
    assert math.isinf(tab.values[int(grid.cell_of(0.25, -2.0))])


def test_phase_barrier_estimate_and_trend(pend_graph):
    g = pend_graph
    grid = g.grid
    sc = int(grid.cell_of(0.0, 0.0))
    schedule = [4 * grid.delta, 2 * grid.delta, grid.delta]
    est = phase_barrier(g, schedule, sc, int(grid.cell_of(0.5, 2.0)), n_min=64)
    assert est.value == pytest.approx(2 / math.pi, abs=0.06)
    # monotone: more jump budget never hurts
    finite = [v for v in est.per_eps if math.isfinite(v)]
    assert all(a <= b + 1e-12 for a, b in zip(finite, finite[1:]))
    assert est.converged
    # escaped-cell queries are rejected
    if g.escaped.any():
        bad = int(np.flatnonzero(g.escaped)[0])
        with pytest.raises(ValueError):
            phase_barrier(g, schedule, sc, bad)


def test_phase_barrier_all_matches_single(pend_graph):
    g = pend_graph
    grid = g.grid
    sc = int(grid.cell_of(0.0, 0.0))
    schedule = [4 * grid.delta, 2 * grid.delta]
    tables = {}
    values, idx, per = phase_barrier_all(g, schedule, sc, n_min=64,
                                         tables=tables)
    x = int(grid.cell_of(0.5, 2.0))
    est = phase_barrier(g, schedule, sc, x, n_min=64, tables=tables)
    assert values[x] == pytest.approx(est.value, abs=1e-12)


def test_flow_shift_identity(pend_graph):
    # prepending the flow edge at a snap-free cell changes the chain
    # value by exactly that edge's weight
    g = pend_graph
    grid = g.grid
    eps = 4 * grid.delta
    sc = int(grid.cell_of(0.0, 0.0))
    assert g.flow_to[sc] == sc and g.flow_snap[sc] == 0.0
    tab = budget_value_iteration(g, eps, sc, n_min=64, window=16)
    tab2 = budget_value_iteration(g, eps, int(g.flow_to[sc]), n_min=64, window=16)
    fin = np.isfinite(tab.values) & np.isfinite(tab2.values)
    assert np.abs((tab.values - (g.flow_w[sc] + tab2.values))[fin]).max() <= 1e-9


def test_phase_triangle_inequality(pend_graph):
    g = pend_graph
    grid = g.grid
    eps = 4 * grid.delta
    sc = int(grid.cell_of(0.0, 0.0))
    mid = int(grid.cell_of(0.25, 2 * math.sin(math.pi * 0.25)))
    t_s = budget_value_iteration(g, eps, sc, n_min=64, window=16)
    t_m = budget_value_iteration(g, eps, mid, n_min=64, window=16)
    fin = np.isfinite(t_m.values) & np.isfinite(t_s.values)
    lhs = t_s.values[fin]
    rhs = t_s.values[mid] + t_m.values[fin]
    assert (lhs <= rhs + 1e-9).all()


def test_energy_obstruction(pend_graph):
    # every finite pair shares the corrected energy level: with the
    # section pinning E = alpha - H, the conserved quantity vanishes on
    # all cells, so the check is structural
    g = pend_graph
    E = g.alpha - g.H_cells
    G_c = E + g.H_cells - g.alpha
    assert np.abs(G_c).max() <= 1e-15


def test_pendulum_phase_sets(pend_graph):
    g = pend_graph
    grid = g.grid
    eps = 4 * grid.delta
    tdp = 2 * grid.delta ** 2
    au = symplectic_aubry_set(g, eps, tdp, n_min=64)
    Q, P = grid.center(au)
    assert np.hypot(circle_dist(Q, 0.0), P).max() <= 2 * grid.delta
    tables = {}
    cells, wits, defects = symplectic_mane_set(g, eps, au[:1], tol_gap=1.5,
                                               n_min=64, tables=tables)
    Qm, Pm = grid.center(cells)
    qs = np.linspace(0, 1, 1001)
    sep = np.concatenate([np.column_stack([qs, 2 * np.sin(np.pi * qs)]),
                          np.column_stack([qs, -2 * np.sin(np.pi * qs)])])
    d = np.hypot(circle_dist(Qm[:, None], sep[:, 0][None, :]),
                 Pm[:, None] - sep[:, 1][None, :]).min(axis=1)
    assert d.max() <= 2 * grid.delta
    # inclusion: every Aubry cell belongs to the Mane set as computed
    assert set(int(a) for a in au) <= set(int(c) for c in cells)
    classes, quot = static_classes_phase(g, eps, au[:1], tol_class=0.1,
                                         n_min=64, tables=tables)
    assert len(classes) == 1


def test_phase_sets_match_lifted_config_sets(pend_graph):
    # the phase-space sets and the configuration-space lifted sets
    # describe the same objects: Hausdorff distance at most two cell
    # diameters on the pendulum
    from aubry.action import ConfigGrid, build_kernel
    from aubry.barrier import (aubry_momenta, mane_momenta, mane_set,
                               peierls_barrier)
    from aubry.critical import min_mean_cycle

    g = pend_graph
    grid = g.grid
    eps = 4 * grid.delta
    kern = build_kernel(pendulum(), ConfigGrid(128), K=16)
    crit = min_mean_cycle(kern)
    tab = peierls_barrier(kern, crit.alpha)
    data = aubry_momenta(tab, kern, pendulum(), 20.0 / 128 ** 2)
    nodes, wits, _ = mane_set(tab, 1.5, aubry_nodes=data.projected)
    mm = mane_momenta(tab, wits)
    lifted_mane = np.array([(j / 128.0, p) for j, ms in mm.items() for p in ms])
    lifted_aubry = data.lifted[:, :2]

    au = symplectic_aubry_set(g, eps, 2 * grid.delta ** 2, n_min=64)
    tables = {}
    cells, _, _ = symplectic_mane_set(g, eps, au[:1], 1.5, n_min=64,
                                      tables=tables)

    def hausdorff(a, b):
        d = np.hypot(circle_dist(a[:, 0][:, None], b[:, 0][None, :]),
                     a[:, 1][:, None] - b[:, 1][None, :])
        return max(d.min(axis=1).max(), d.min(axis=0).max())

    Qa, Pa = grid.center(au)
    assert hausdorff(np.column_stack([Qa, Pa]), lifted_aubry) <= 2 * grid.delta
    Qm, Pm = grid.center(cells)
    assert hausdorff(np.column_stack([Qm, Pm]), lifted_mane) <= 2 * grid.delta


def test_biasymptotic_pendulum(pend_graph):
    g = pend_graph
    grid = g.grid
    au = symplectic_aubry_set(g, 4 * grid.delta, 2 * grid.delta ** 2, n_min=64)
    # an on-separatrix cell is homoclinic to the saddle
    c = int(grid.cell_of(0.25, 2 * math.sin(math.pi * 0.25)))
    f, b = biasymptotic_check(g, c, au, T_max=50)
    assert f <= 2 * grid.delta and b <= 2 * grid.delta
    # the Aubry cell itself stays at distance zero
    f0, b0 = biasymptotic_check(g, int(grid.cell_of(0.0, 0.0)), au, T_max=10)
    assert f0 == 0.0 and b0 == 0.0


def test_double_well_phase_classes():
    grid = PhaseGrid(64, 64, 3.0)
    g = build_phase_graph(double_well(), grid, alpha=1.0, K_sub=128)
    eps = 4 * grid.delta
    au = symplectic_aubry_set(g, eps, 2 * grid.delta ** 2, n_min=64)
    Q, P = grid.center(au)
    # clusters at both hyperbolic points
    assert np.hypot(np.minimum(circle_dist(Q, 0.0), circle_dist(Q, 0.5)),
                    P).max() <= 2 * grid.delta
    reps = [int(au[np.argmin(np.hypot(circle_dist(Q, 0.0), P))]),
            int(au[np.argmin(np.hypot(circle_dist(Q, 0.5), P))])]
    classes, quot = static_classes_phase(g, eps, reps, tol_class=0.1, n_min=64)
    assert len(classes) == 2
    assert quot[0, 1] == pytest.approx(4 / math.pi, abs=0.1)
    assert quot[0, 1] == pytest.approx(quot[1, 0], abs=1e-9)
    # heteroclinic cell: forward and backward tails approach different
    # classes
    tables = {}
    cells, wits, defects = symplectic_mane_set(g, eps, np.array(reps), 1.5,
                                               n_min=64, tables=tables)
    het = int(grid.cell_of(0.25, 2 * math.sin(2 * math.pi * 0.25)))
    assert het in set(int(c) for c in cells)
    f, b = biasymptotic_check(g, het, au, T_max=50)
    assert f <= 2 * grid.delta and b <= 2 * grid.delta


def test_shifted_free_particle_aubry_along_curve():
    # the image of the rest orbits is the curve of fixed points
    # p = a sin(2 pi q); away from the exact-center anchors those cells
    # recur by crawling, so the budget must cover one slow drift around
    # the circle (eps = 8 delta at this coarse grid)
    a = 0.3
    m = pullback_hamiltonian(free_particle(), cosine_shift(a))
    grid = PhaseGrid(16, 16, 1.0)
    g = build_phase_graph(m, grid, alpha=0.0, K_sub=64)
    eps = 8 * grid.delta
    au = symplectic_aubry_set(g, eps, 2 * grid.delta ** 2, n_min=16)
    Q, P = grid.center(au)
    # members stay within the jump-round-trip halo (radius eps / 2) of
    # the fixed-point curve p = a sin(2 pi q)
    qs = np.linspace(0, 1, 513)
    dist_to_curve = np.hypot(
        circle_dist(Q[:, None], qs[None, :]),
        P[:, None] - a * np.sin(2 * np.pi * qs)[None, :]).min(axis=1)
    assert dist_to_curve.max() <= eps / 2 + grid.dp / 2
    # full column coverage, with the per-column core on the curve
    cols = {}
    for c, q, p in zip(au, Q, P):
        off = abs(p - a * math.sin(2 * math.pi * q))
        if c // grid.np_ not in cols or off < cols[c // grid.np_]:
            cols[c // grid.np_] = off
    assert len(cols) == 16
    assert max(cols.values()) <= grid.dp / 2 + 1e-12


def test_raw_mode_growth_slope():
    # without the alpha correction the pendulum kernel is sub-critical:
    # the self-loop at the hyperbolic point has weight -alpha per period
    grid = PhaseGrid(32, 32, 3.0)
    g = build_phase_graph(pendulum(), grid, alpha=0.0, K_sub=64)
    slope, mins = phase_growth_slope(g, 2 * grid.delta, n_iters=48)
    assert slope == pytest.approx(-1.0, abs=0.05)
    g2 = build_phase_graph(pendulum(), grid, alpha=1.0, K_sub=64)
    slope2, _ = phase_growth_slope(g2, 2 * grid.delta, n_iters=48)
    assert slope2 == pytest.approx(0.0, abs=1e-6)


def test_budget_coarseness_retry(pend_graph):
    # with a tiny declared step the probe fires and retries at twice the
    # budget resolution; the reported value never worsens
    g = pend_graph
    grid = g.grid
    sc = int(grid.cell_of(0.0, 0.0))
    schedule = [4 * grid.delta]
    x = int(grid.cell_of(0.5, 2.0))
    plain = phase_barrier(g, schedule, sc, x, n_min=64, value_step=1e9)
    fine = phase_barrier(g, schedule, sc, x, n_min=64, value_step=1e-6)
    assert fine.value <= plain.value + 1e-9
