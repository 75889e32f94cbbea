"""Independent oracles used to freeze expected values: quadrature of
the mechanical metric sqrt(2(c - V)), brute-force dynamic programming
over broken paths, exhaustive cycle enumeration, and dense-grid
Legendre maximization.  These deliberately avoid the package's own
code paths for the quantities they check.
"""

import itertools
import math

import numpy as np
from scipy.integrate import quad


def maupertuis_arc(V, c, a, b, limit=400):
    """Integral of sqrt(2 max(c - V, 0)) from a to b (a <= b)."""
    val, _ = quad(lambda q: math.sqrt(max(2.0 * (c - V(q)), 0.0)), a, b,
                  limit=limit)
    return val


def maupertuis_h(V, c, q0, q1):
    """Barrier between circle points at the critical level c: minimum of
    the two arc integrals."""
    a, b = q0 % 1.0, q1 % 1.0
    lo, hi = min(a, b), max(a, b)
    direct = maupertuis_arc(V, c, lo, hi)
    around = maupertuis_arc(V, c, 0.0, lo) + maupertuis_arc(V, c, hi, 1.0)
    return min(direct, around)


def brute_force_kernel(L, n, K, t0=0.0, s=1.0):
    """Plain-python broken-path DP: F(q_i, t0; q_j, t0 + s) for all
    grid pairs, midpoint quadrature on straight segments with +-1
    winding lifts.  Independent of aubry.action."""
    tau = s / K
    nodes = [i / n for i in range(n)]
    stage = [[None] * n for _ in range(n)]
    out = None
    for k in range(K):
        tm = t0 + (k + 0.5) * tau
        cost = [[0.0] * n for _ in range(n)]
        for ia in range(n):
            for ib in range(n):
                d0 = nodes[ib] - nodes[ia]
                d0 -= round(d0)
                best = math.inf
                for lift in (-1.0, 0.0, 1.0):
                    d = d0 + lift
                    v = d / tau
                    mid = (nodes[ia] + 0.5 * d) % 1.0
                    best = min(best, tau * L(mid, v, tm))
                cost[ia][ib] = best
        if out is None:
            out = cost
        else:
            new = [[math.inf] * n for _ in range(n)]
            for i in range(n):
                for m in range(n):
                    base = out[i][m]
                    row = cost[m]
                    for j in range(n):
                        v = base + row[j]
                        if v < new[i][j]:
                            new[i][j] = v
            out = new
    return np.array(out)


def enumerate_cycle_min_mean(W):
    """Minimum cycle mean by exhaustive enumeration of simple cycles
    (small matrices only)."""
    n = W.shape[0]
    best = math.inf
    for length in range(1, n + 1):
        for nodes in itertools.permutations(range(n), length):
            if nodes[0] != min(nodes):
                continue  # one rotation per cycle
            w = sum(W[nodes[i], nodes[(i + 1) % length]] for i in range(length))
            best = min(best, w / length)
    return best


def dense_legendre(H, q, v, t, p_lo=-16.0, p_hi=16.0, n=200001):
    """sup_p [p v - H(q, p, t)] on a dense grid with one parabolic
    refinement step."""
    p = np.linspace(p_lo, p_hi, n)
    g = p * v - H(q, p, t)
    i = int(np.argmax(g))
    if 0 < i < n - 1:
        h = p[1] - p[0]
        denom = g[i - 1] - 2 * g[i] + g[i + 1]
        if denom < 0:
            dp = 0.5 * h * (g[i + 1] - g[i - 1]) / (-denom)
            p_star = p[i] + dp
            return p_star * v - float(H(q, p_star, t)), p_star
    return float(g[i]), float(p[i])


def central_difference(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def min_plus_power_minimum(W, n_min, n_max):
    """Running elementwise minimum of min-plus powers, brute-force
    (cubic loops) for cross-checking small barrier tables."""
    n = W.shape[0]
    V = W.copy()
    horizon = 1
    while horizon < n_min:
        V = np.min(V[:, :, None] + W[None, :, :], axis=1)
        horizon += 1
    run = V.copy()
    while horizon < n_max:
        V = np.min(V[:, :, None] + W[None, :, :], axis=1)
        run = np.minimum(run, V)
        horizon += 1
    return run
