"""Open-access launch behaviour, its steady states and their stability.

Under open access, launches continue until next period's collision
probability reaches a target level. That level is the excess return in
constant mode. In time-varying mode it is the estimated adjustment equation,
whose return term depends on next period's satellite stock.

All solvers work on numpy lanes so that whole grids of states (or whole runs
of frozen years) are handled in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import dynamics as dyn
from .errors import ConvergenceError, UnboundedEquilibriumError, ValidationError
from .params import CONSTANT, Scenario

DAMPING = 0.5
FP_TOL = 1e-8
FP_MAX_ITER = 200
NEWTON_MAX_ITER = 200
SCAN_POINTS = 400
BISECT_MAX_ITER = 80
BISECT_RTOL = 4e-16


# --------------------------------------------------------------------------
# target isoquant


def target_level(scenario: Scenario, t, S_next):
    """Collision probability that zeroes expected profit on a launch at ``t``."""
    if scenario.mode == CONSTANT:
        return np.full(np.shape(S_next), scenario.tau) if np.ndim(S_next) else scenario.tau
    e = scenario.econ
    t = np.asarray(t, dtype=float)
    S_next = np.maximum(np.asarray(S_next, dtype=float), 1e-12)
    price = e.pi * np.exp(e.a * (t + 1.0)) * (1.0 + e.eta) * S_next**e.eta
    cost_next = e.F * np.exp(e.b * (t + 1.0))
    out = e.gamma0 + e.gamma1 * price / cost_next + e.gamma2 * math.exp(-e.b)
    return out if out.ndim else float(out)


def _level_depends_on_stock(scenario: Scenario) -> bool:
    return scenario.mode != CONSTANT and scenario.econ.eta != 0.0


def max_collision_probability(scenario: Scenario) -> float:
    """Supremum of ``L`` over all states."""
    if not scenario.avoidance:
        return 1.0
    p = scenario.phys
    return 1.0 - p.kappa_ss * p.kappa_sd


# --------------------------------------------------------------------------
# isoquant inversion


def solve_isoquant(S_surv, D_base, tau, scenario: Scenario, x0=None):
    """Smallest ``X >= 0`` with ``L(S_surv + X, D_base + m X) = tau``, per lane.

    Lanes already at or above ``tau`` with ``X = 0`` return 0. Without
    avoidance the inversion is closed form; otherwise a safeguarded Newton
    iteration is used, which is monotone because ``L`` is concave along the
    launch ray. ``x0`` warm-starts the iteration.
    """
    phys = scenario.phys
    S_surv, D_base, tau = np.broadcast_arrays(
        np.asarray(S_surv, float), np.asarray(D_base, float), np.asarray(tau, float)
    )
    tau = np.array(tau, dtype=float)
    X = np.zeros(S_surv.shape)
    lmax = max_collision_probability(scenario)
    if np.any(tau >= lmax):
        bad = tau >= lmax
        L0 = dyn.collision_probability((S_surv[bad], D_base[bad]), phys, scenario.avoidance)
        if np.any(L0 < tau[bad]):
            raise UnboundedEquilibriumError(
                f"target collision probability {tau.max():.6g} is unattainable (sup L = {lmax:.6g})"
            )
    if not scenario.avoidance:
        need = -np.log1p(-np.minimum(tau, 1 - 1e-16))
        X = (need - phys.alpha_ss * S_surv - phys.alpha_sd * D_base) / (phys.alpha_ss + phys.m * phys.alpha_sd)
        return np.maximum(X, 0.0)
    h0 = dyn.collision_probability((S_surv, D_base), phys, True) - tau
    active = h0 < 0
    if x0 is not None:
        X = np.where(active, np.maximum(np.broadcast_to(np.asarray(x0, float), X.shape), 0.0), 0.0)
    lo = np.zeros(S_surv.shape)
    hi = np.full(S_surv.shape, np.inf)
    for _ in range(NEWTON_MAX_ITER):
        if not active.any():
            break
        S1 = S_surv[active] + X[active]
        D1 = D_base[active] + phys.m * X[active]
        h = dyn.collision_probability((S1, D1), phys, True) - tau[active]
        LS, LD = dyn.collision_partials((S1, D1), phys, True)
        dh = LS + phys.m * LD
        xa = X[active]
        lo_a, hi_a = lo[active], hi[active]
        lo_a = np.where(h < 0, xa, lo_a)
        hi_a = np.where(h > 0, xa, hi_a)
        newton = xa - h / dh
        bisect = np.where(np.isfinite(hi_a), 0.5 * (lo_a + hi_a), 2 * xa + 1.0)
        ok = (newton > lo_a) & (newton < hi_a) & np.isfinite(newton)
        xn = np.where(ok, newton, bisect)
        done = (np.abs(xn - xa) <= 1e-13 * np.maximum(1.0, np.abs(xn))) | (h == 0)
        X[active] = xn
        lo[active], hi[active] = lo_a, hi_a
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    else:
        raise ConvergenceError("isoquant Newton iteration did not converge",
                               {"lanes": int(active.sum())})
    return X


def launch_rates(S, D, scenario: Scenario, t=0, x_upper: float | None = None):
    """Open-access launch rate for every lane ``(S, D, t)``."""
    phys, opts = scenario.phys, scenario.options
    S, D, t = np.broadcast_arrays(np.asarray(S, float), np.asarray(D, float), np.asarray(t, float))
    S_surv = dyn.surviving_stock(S, D, phys, opts)
    D_base = dyn.next_debris_base(S, D, phys, opts)
    cap = scenario.econ.x_upper if x_upper is None else x_upper
    try:
        if not _level_depends_on_stock(scenario):
            X = solve_isoquant(S_surv, D_base, target_level(scenario, t, S_surv), scenario)
        else:
            X = _fixed_point(S_surv, D_base, t, scenario)
    except UnboundedEquilibriumError:
        if cap is None:
            raise
        return np.full(S.shape, float(cap))
    if cap is not None:
        X = np.minimum(X, cap)
    return X


def _fixed_point(S_surv, D_base, t, scenario: Scenario):
    """Damped iteration ``X <- (1-w) X + w X_implied`` with a bracketing fallback."""
    X = solve_isoquant(S_surv, D_base, target_level(scenario, t, S_surv), scenario)
    active = np.ones(X.shape, bool)
    for _ in range(FP_MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        tau = target_level(scenario, t[idx], S_surv[idx] + X[idx])
        implied = solve_isoquant(S_surv[idx], D_base[idx], tau, scenario, x0=X[idx])
        new = (1 - DAMPING) * X[idx] + DAMPING * implied
        conv = np.abs(new - X[idx]) <= FP_TOL * np.maximum(1.0, np.abs(new))
        X[idx] = new
        active[idx[conv]] = False
    for i in np.flatnonzero(active):
        X[i] = _bracketed_launch(S_surv[i], D_base[i], t[i], scenario)
    return X


def _bracketed_launch(s_surv, d_base, t, scenario: Scenario) -> float:
    phys = scenario.phys

    def h(x):
        L = dyn.collision_probability((s_surv + x, d_base + phys.m * x), phys, scenario.avoidance)
        return L - target_level(scenario, t, s_surv + x)

    if h(0.0) >= 0:
        return 0.0
    hi = 1.0
    while h(hi) < 0:
        hi *= 2.0
        if hi > 1e300:
            raise UnboundedEquilibriumError("no launch rate reaches the target level")
    return brentq(h, 0.0, hi, xtol=1e-12, rtol=1e-14)


def equilibrium_launch_rate(state, scenario: Scenario, t: float = 0) -> float:
    S, D = state.as_tuple() if hasattr(state, "as_tuple") else state
    return float(launch_rates(S, D, scenario, t))


class OpenAccessPolicy:
    """Callable launch policy ``X(S, D, t)``.

    ``frozen_t`` pins the economic environment to a single period, which is
    how the Kessler region of one calendar year is evaluated.
    """

    kind = "open-access"

    def __init__(self, scenario: Scenario, frozen_t: float | None = None):
        self.scenario = scenario
        self.frozen_t = frozen_t

    def __call__(self, S, D, t=0):
        tt = t if self.frozen_t is None else self.frozen_t
        return launch_rates(S, D, self.scenario, tt)


# --------------------------------------------------------------------------
# one-dimensional reduction and steady states


def satellite_isoquant(D, scenario: Scenario, t=None):
    """``S_hat(D)``: satellites that put ``L`` on the target, clamped at 0."""
    phys = scenario.phys
    D = np.asarray(D, dtype=float)
    if scenario.mode == CONSTANT or t is None:
        tau = scenario.tau if scenario.mode == CONSTANT else None
    else:
        tau = None if _level_depends_on_stock(scenario) else float(target_level(scenario, t, 1.0))
    if tau is not None:
        return _s_hat_closed(D, tau, scenario)
    return _s_hat_bisect(D, scenario, t)


def _s_hat_closed(D, tau, scenario: Scenario):
    phys = scenario.phys
    if not scenario.avoidance:
        S = (-math.log1p(-tau) - phys.alpha_sd * D) / phys.alpha_ss
        return np.maximum(S, 0.0)
    c1, c2 = 1 - phys.kappa_ss, 1 - phys.kappa_sd
    p2 = -np.expm1(-phys.alpha_sd * D)
    p1 = (1.0 - (1.0 - tau) / (1.0 - c2 * p2)) / c1
    if np.any(p1 >= 1.0):
        raise UnboundedEquilibriumError("target level exceeds the attainable collision probability")
    S = -np.log1p(-np.maximum(p1, 0.0)) / phys.alpha_ss
    return np.where(p1 > 0, S, 0.0)


def _s_hat_bisect(D, scenario: Scenario, t):
    phys = scenario.phys
    D = np.atleast_1d(D).astype(float)

    def h(S):
        return dyn.collision_probability((S, D), phys, scenario.avoidance) - target_level(scenario, t, S)

    lo = np.zeros_like(D)
    hi = np.full_like(D, 1.0 / phys.alpha_ss)
    for _ in range(200):
        grow = h(hi) < 0
        if not grow.any():
            break
        hi = np.where(grow, hi * 2, hi)
    pos = h(np.zeros_like(D)) < 0
    for _ in range(BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        below = h(mid) < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= BISECT_RTOL * hi):
            break
    return np.where(pos, 0.5 * (lo + hi), 0.0)


def _launch_share(tau, scenario: Scenario):
    """Launches per satellite needed to hold a steady stock on the isoquant."""
    keep = 1.0 - tau
    if scenario.turnover:
        keep = keep * (1.0 - scenario.phys.mu)
    return 1.0 - keep


def reduction_Y(D, scenario: Scenario, t=None):
    """Net debris growth along the satellite isoquant at a steady stock.

    Positive values mean debris grows if the satellite stock is held where
    next period's collision probability equals the target.
    """
    phys = scenario.phys
    D = np.asarray(D, dtype=float)
    S = satellite_isoquant(D, scenario, t)
    tau = scenario.tau if scenario.mode == CONSTANT else target_level(scenario, t, S)
    X = _launch_share(tau, scenario) * S
    out = -phys.delta * D + dyn.fragment_formation((S, D), phys, scenario.fragment_avoidance) + phys.m * X
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SteadyStateRecord:
    S_star: float
    D_star: float
    X_star: float
    stable: bool
    y_prime: float

    def as_dict(self) -> dict:
        return dict(S_star=self.S_star, D_star=self.D_star, X_star=self.X_star,
                    stable=self.stable, y_prime=self.y_prime)


def debris_scale(scenario: Scenario) -> float:
    return 1.0 / scenario.phys.alpha_dd


def find_steady_states(scenario: Scenario, t=None, n_scan: int = SCAN_POINTS,
                       d_min: float = 1e-3, d_max: float | None = None) -> list[SteadyStateRecord]:
    """Roots of :func:`reduction_Y` classified by the sign of its slope.

    ``t`` selects a frozen period of a time-varying scenario.
    """
    if scenario.mode != CONSTANT and t is None:
        raise ValidationError("steady states of a time-varying scenario need a frozen period t")
    if d_max is None:
        d_max = 1e3 * debris_scale(scenario)
    grid = np.concatenate([[0.0], np.logspace(math.log10(d_min), math.log10(d_max), n_scan)])
    y = reduction_Y(grid, scenario, t)
    f = lambda d: np.asarray(reduction_Y(d, scenario, t)).item()
    roots = []
    for i in range(len(grid) - 1):
        if y[i] == 0.0 and i > 0:
            roots.append(grid[i])
        elif y[i] * y[i + 1] < 0:
            roots.append(brentq(f, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-15))
    out = []
    for d in roots:
        h = 1e-6 * max(d, 1e-6)
        yp = (f(d + h) - f(d - h)) / (2 * h) if d > h else (f(d + h) - f(d)) / h
        S = np.asarray(satellite_isoquant(d, scenario, t)).item()
        tau = scenario.tau if scenario.mode == CONSTANT else float(target_level(scenario, t, S))
        X = float(_launch_share(tau, scenario) * S)
        out.append(SteadyStateRecord(S, float(d), X, bool(yp < 0), float(yp)))
    return sorted(out, key=lambda r: r.D_star)


def steady_state_residuals(rec: SteadyStateRecord, scenario: Scenario) -> tuple[float, float]:
    """Relative residuals of the satellite and debris steady-state equations."""
    phys, opts = scenario.phys, scenario.options
    S1, D1 = dyn.transition(rec.S_star, rec.D_star, rec.X_star, phys, opts)
    rs = abs(S1 - rec.S_star) / max(rec.S_star, 1.0)
    rd = abs(D1 - rec.D_star) / max(rec.D_star, 1.0)
    return float(rs), float(rd)


def stability_margin(rec: SteadyStateRecord, scenario: Scenario) -> float:
    """Closed-form slope of the reduction at a steady state.

    Equals ``(G_D - delta) - (L_D / L_S)(G_S + m * x)`` where ``x`` is the
    launch share; on the clamped branch (no satellites) only ``G_D - delta``
    remains. Negative means stable.
    """
    phys = scenario.phys
    st = (rec.S_star, rec.D_star)
    G_S, G_D = dyn.fragment_partials(st, phys, scenario.fragment_avoidance)
    if rec.S_star <= 0.0:
        return float(G_D - phys.delta)
    L_S, L_D = dyn.collision_partials(st, phys, scenario.avoidance)
    tau = scenario.tau if scenario.mode == CONSTANT else rec.X_star / rec.S_star
    share = _launch_share(tau, scenario) if scenario.mode == CONSTANT else tau
    return float((G_D - phys.delta) - (L_D / L_S) * (G_S + phys.m * share))
