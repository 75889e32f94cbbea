"""Hamiltonian models on the cotangent bundle of the circle, with time
period one, and the basic operations on them: Legendre transform,
extended vector field (position, momentum, time, conjugate energy),
fixed-step 4th-order flow, and the running action along orbits.

All evaluation callables are numpy-vectorized: they accept scalars or
arrays of matching shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi


class WindowEscape(RuntimeError):
    """Orbit left the computational momentum window."""


class LegendreError(RuntimeError):
    """Scalar Legendre maximization failed to bracket a maximum."""


def wrap_unit(x):
    """Canonical representative of a circle point in [0, 1)."""
    return x - np.floor(x)


def circle_dist(a, b):
    """Distance on R/Z: min(|a-b|, 1-|a-b|), at most 1/2."""
    d = np.abs(wrap_unit(a) - wrap_unit(b))
    return np.minimum(d, 1.0 - d)


def shorter_lift(a, b):
    """Signed displacement from a to b along the shorter circle arc, in (-1/2, 1/2]."""
    d = wrap_unit(b) - wrap_unit(a)
    return d - np.round(d)


@dataclass(frozen=True)
class PhasePoint:
    q: float
    p: float


@dataclass(frozen=True)
class ExtendedState:
    """Point of the extended phase space: (q, p) plus circle time t and
    the energy E conjugate to time.  On orbits E + H(q, p, t) is a
    conserved quantity (up to integrator tolerance)."""

    q: float
    p: float
    t: float
    E: float

    def as_array(self):
        return np.array([self.q, self.p, self.t, self.E])


@dataclass(frozen=True)
class HamiltonianModel:
    """A C^2 Hamiltonian H(q, p, t), 1-periodic in q and t.

    Models built by the catalog helpers below have the quadratic fiber
    structure H = (p - shift(q, t))^2 / 2 + potential(q, t), recorded in
    `m_shift`/`potential` so the Legendre transform and the Lagrangian
    have closed forms.  `evaluate` and the partial derivatives are the
    authoritative definition either way.
    """

    name: str
    evaluate: Callable
    dH_dp: Callable
    dH_dq: Callable
    dH_dt: Callable
    convex_in_p: bool = True
    parameters: dict = field(default_factory=dict)
    # quadratic-fiber structure, present for all built-in models
    m_shift: Optional[Callable] = None
    dm_shift_dq: Optional[Callable] = None
    potential: Optional[Callable] = None
    dV_dq: Optional[Callable] = None
    time_dependent: bool = False
    # gnuplot expression for the critical level curve p(q) >= 0, if known
    separatrix_expr: Optional[str] = None
    separatrix_p: Optional[Callable] = None

    @property
    def quadratic(self):
        return self.m_shift is not None and self.potential is not None

    def lagrangian(self, q, v, t):
        """L(q, v, t) by the fiberwise Legendre transform (closed form
        for quadratic models, scalar maximization otherwise)."""
        if self.quadratic:
            return 0.5 * v * v + self.m_shift(q, t) * v - self.potential(q, t)
        return _legendre_numeric(self, q, v, t)[0]


def _quadratic_model(name, shift, dshift_dq, potential, dV_dq, dV_dt,
                     parameters, time_dependent=False, separatrix_expr=None,
                     separatrix_p=None):
    def evaluate(q, p, t):
        u = p - shift(q, t)
        return 0.5 * u * u + potential(q, t)

    def dH_dp(q, p, t):
        return p - shift(q, t)

    def dH_dq(q, p, t):
        return -(p - shift(q, t)) * dshift_dq(q, t) + dV_dq(q, t)

    def dH_dt(q, p, t):
        return dV_dt(q, t)

    return HamiltonianModel(
        name=name,
        evaluate=evaluate,
        dH_dp=dH_dp,
        dH_dq=dH_dq,
        dH_dt=dH_dt,
        convex_in_p=True,
        parameters=dict(parameters),
        m_shift=shift,
        dm_shift_dq=dshift_dq,
        potential=potential,
        dV_dq=dV_dq,
        time_dependent=time_dependent,
        separatrix_expr=separatrix_expr,
        separatrix_p=separatrix_p,
    )


def _zero(q, t):
    return np.zeros_like(np.asarray(q, dtype=float))


def free_particle():
    """H = p^2 / 2."""
    return _quadratic_model(
        "free_particle", _zero, _zero, _zero, _zero, _zero, {},
        separatrix_expr="0", separatrix_p=lambda q: np.zeros_like(np.asarray(q, float)),
    )


def pendulum(k=1.0):
    """H = p^2 / 2 + k cos(2 pi q); the critical energy level is
    p = +-2 sqrt(k) sin(pi q)."""
    def V(q, t):
        return k * np.cos(TWO_PI * q)

    def dV(q, t):
        return -k * TWO_PI * np.sin(TWO_PI * q)

    rk = math.sqrt(k)
    return _quadratic_model(
        f"pendulum_k{k:g}", _zero, _zero, V, dV, _zero, {"k": k},
        separatrix_expr=f"2*sqrt({k:g})*abs(sin(pi*x))",
        separatrix_p=lambda q: 2.0 * rk * np.abs(np.sin(math.pi * np.asarray(q, float))),
    )


def double_well(k=1.0):
    """H = p^2 / 2 + k cos(4 pi q): two potential maxima, at q = 0 and q = 1/2."""
    def V(q, t):
        return k * np.cos(2.0 * TWO_PI * q)

    def dV(q, t):
        return -k * 2.0 * TWO_PI * np.sin(2.0 * TWO_PI * q)

    rk = math.sqrt(k)
    return _quadratic_model(
        f"double_well_k{k:g}", _zero, _zero, V, dV, _zero, {"k": k},
        separatrix_expr=f"2*sqrt({k:g})*abs(sin(2*pi*x))",
        separatrix_p=lambda q: 2.0 * rk * np.abs(np.sin(TWO_PI * np.asarray(q, float))),
    )


def forced_pendulum(eps=0.1, k=1.0):
    """H = p^2 / 2 + (1 + eps cos(2 pi t)) k cos(2 pi q)."""
    def V(q, t):
        return (1.0 + eps * np.cos(TWO_PI * t)) * k * np.cos(TWO_PI * q)

    def dV(q, t):
        return -(1.0 + eps * np.cos(TWO_PI * t)) * k * TWO_PI * np.sin(TWO_PI * q)

    def dVt(q, t):
        return -eps * TWO_PI * np.sin(TWO_PI * t) * k * np.cos(TWO_PI * q)

    return _quadratic_model(
        f"forced_pendulum_e{eps:g}", _zero, _zero, V, dV, dVt,
        {"eps": eps, "k": k}, time_dependent=True,
    )


CATALOG = {
    "free_particle": free_particle,
    "pendulum": pendulum,
    "double_well": double_well,
    "forced_pendulum": forced_pendulum,
}


def make_model(name, **params):
    if name not in CATALOG:
        raise KeyError(f"unknown model '{name}' (have {sorted(CATALOG)})")
    return CATALOG[name](**params)


# ---------------------------------------------------------------------------
# Legendre transform

def _legendre_numeric(model, q, v, t, tol=1e-12, max_expand=80):
    """sup_p [p v - H(q, p, t)] by golden-section search on an expanding
    bracket seeded at p = v.  Scalar arguments only."""
    g = lambda p: p * v - model.evaluate(q, p, t)
    lo, hi = v - 1.0, v + 1.0
    width = 1.0
    for _ in range(max_expand):
        if g(lo) < g(lo + 1e-3 * width) and g(hi) < g(hi - 1e-3 * width):
            break
        width *= 2.0
        lo, hi = v - width, v + width
    else:
        raise LegendreError(
            f"no interior maximum bracketed for q={q}, v={v}, t={t}; "
            "model may violate superlinearity"
        )
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    gc, gd = g(c), g(d)
    while b - a > tol:
        if gc > gd:
            b, d, gd = d, c, gc
            c = b - invphi * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + invphi * (b - a)
            gd = g(d)
    p_star = 0.5 * (a + b)
    return g(p_star), p_star


def legendre_transform(model, q, v, t):
    """Lagrangian value and maximizing momentum: (L(q, v, t), p*).

    For quadratic models (H = (p - s)^2 / 2 + V) the closed form
    L = v^2/2 + s v - V, p* = v + s is used; otherwise golden-section
    maximization over p.
    """
    if not model.convex_in_p:
        raise ValueError("legendre_transform requires a fiberwise convex model")
    if model.quadratic:
        s = model.m_shift(q, t)
        return 0.5 * v * v + s * v - model.potential(q, t), v + s
    return _legendre_numeric(model, q, v, t)


@dataclass(frozen=True)
class LagrangianView:
    """Lagrangian side of a model; `evaluate` and `maximizer` are
    vectorized for quadratic models and scalar otherwise."""

    model: HamiltonianModel

    def evaluate(self, q, v, t):
        return self.model.lagrangian(q, v, t)

    def maximizer(self, q, v, t):
        if self.model.quadratic:
            return v + self.model.m_shift(q, t)
        return _legendre_numeric(self.model, q, v, t)[1]


# ---------------------------------------------------------------------------
# Extended flow

def hamiltonian_vector_field(model, s: ExtendedState):
    """(dq, dp, dt, dE) = (dH/dp, -dH/dq, 1, -dH/dt) at the state."""
    return (
        float(model.dH_dp(s.q, s.p, s.t)),
        float(-model.dH_dq(s.q, s.p, s.t)),
        1.0,
        float(-model.dH_dt(s.q, s.p, s.t)),
    )


def _rk4_arrays(model, q, p, t, E, A, duration, substeps, alpha=0.0, p_bound=None,
                store_every=0):
    """Classical RK4 on (q, p, t, E) plus the running action
    dA/dt = p dH/dp - H + alpha.  Array-shaped states supported.
    Returns final (q, p, t, E, A) and optionally intermediate samples."""
    h = duration / substeps
    samples = []

    def rhs(q, p, t):
        hp = model.dH_dp(q, p, t)
        hq = model.dH_dq(q, p, t)
        ht = model.dH_dt(q, p, t)
        act = p * hp - model.evaluate(q, p, t) + alpha
        return hp, -hq, -ht, act

    for step in range(substeps):
        k1q, k1p, k1E, k1A = rhs(q, p, t)
        k2q, k2p, k2E, k2A = rhs(q + 0.5 * h * k1q, p + 0.5 * h * k1p, t + 0.5 * h)
        k3q, k3p, k3E, k3A = rhs(q + 0.5 * h * k2q, p + 0.5 * h * k2p, t + 0.5 * h)
        k4q, k4p, k4E, k4A = rhs(q + h * k3q, p + h * k3p, t + h)
        q = q + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        p = p + (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        E = E + (h / 6.0) * (k1E + 2.0 * k2E + 2.0 * k3E + k4E)
        A = A + (h / 6.0) * (k1A + 2.0 * k2A + 2.0 * k3A + k4A)
        t = t + h
        if p_bound is not None and np.any(np.abs(p) > p_bound):
            raise WindowEscape(f"orbit left computational window |p| <= {p_bound}")
        if store_every and (step + 1) % store_every == 0:
            samples.append((np.array(q, copy=True), np.array(p, copy=True),
                            np.array(A, copy=True), np.array(E, copy=True)))
    return q, p, t, E, A, samples


def flow_step(model, s: ExtendedState, duration, substeps, p_bound=64.0):
    """Advance the extended state by `duration` with a fixed-order
    one-step scheme applied `substeps` times.  Negative durations
    integrate backward."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    q, p, t, E, _, _ = _rk4_arrays(model, s.q, s.p, s.t, s.E, 0.0,
                                   duration, substeps, p_bound=p_bound)
    return ExtendedState(float(q), float(p), float(t), float(E))


def running_action(model, s: ExtendedState, duration, substeps, alpha=0.0,
                   p_bound=64.0):
    """Endpoint and accumulated Lagrangian action along the orbit,
    integrated with the same scheme and step as the flow.  With
    alpha != 0 the integrand is L + alpha."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    q, p, t, E, A, _ = _rk4_arrays(model, s.q, s.p, s.t, s.E, 0.0,
                                   duration, substeps, alpha=alpha, p_bound=p_bound)
    return ExtendedState(float(q), float(p), float(t), float(E)), float(A)


def flow_many(model, q, p, t, E, duration, substeps, alpha=0.0, p_bound=None,
              store_every=0):
    """Vectorized flow for arrays of initial states, with running action.

    Out-of-window orbits are clamped rather than raised: returns
    (q, p, t, E, action, escaped_mask, samples)."""
    q = np.array(q, dtype=float)
    p = np.array(p, dtype=float)
    t = np.array(np.broadcast_to(t, q.shape), dtype=float)
    E = np.array(np.broadcast_to(E, q.shape), dtype=float)
    A = np.zeros_like(q)
    escaped = np.zeros(q.shape, dtype=bool)
    try:
        q, p, t, E, A, samples = _rk4_arrays(model, q, p, t, E, A, duration,
                                             substeps, alpha=alpha,
                                             p_bound=None, store_every=store_every)
    except WindowEscape:  # pragma: no cover - p_bound=None never raises
        raise
    if p_bound is not None:
        escaped = ~np.isfinite(p) | (np.abs(p) > p_bound)
    return q, p, t, E, A, escaped, samples


def conserved_quantity(model, s: ExtendedState, alpha=0.0):
    """E + H(q, p, t) - alpha, the invariant of the (alpha-corrected)
    extended flow."""
    return s.E + float(model.evaluate(s.q, s.p, s.t)) - alpha
