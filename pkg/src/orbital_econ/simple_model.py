"""Three-period launch model: open access, planner and the Kessler threshold.

Launches happen once; satellites operate in a short-run and a long-run
period. ``q`` is the survival probability as a function of objects in orbit
and ``sigma`` the net fragments created per collision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import DomainError, NoPositiveLaunchError, ValidationError

ROOT_XTOL = 1e-14


@dataclass(frozen=True)
class SimpleParams:
    pi: float
    r: float
    F: float
    x_bar: float
    sigma: float
    eta: float = 0.0

    def __post_init__(self):
        if not (self.pi > 0 and self.F > 0 and self.x_bar > 0 and self.r > 0):
            raise ValidationError("pi, r, F and x_bar must be positive")
        if self.sigma < 0:
            raise ValidationError("sigma must be nonnegative")
        if not -1.0 < self.eta <= 0.0:
            raise DomainError("eta must lie in (-1, 0]")


PANEL_A = SimpleParams(pi=1.0, r=0.05, F=0.35, x_bar=5.0, sigma=1.25)
PANEL_B = SimpleParams(pi=1.0, r=0.05, F=0.35, x_bar=5.0, sigma=20.0)


class SurvivalFn:
    """Survival probability ``q(X)`` with a one-sided derivative.

    Subclasses may override :meth:`derivative`; the default is a backward
    difference so kinks are always approached from below.
    """

    def __init__(self, fn: Callable[[float], float], x_bar: float, probe: int = 257):
        self._fn = fn
        self.x_bar = float(x_bar)
        xs = np.linspace(0.0, self.x_bar, probe)
        vals = np.array([fn(x) for x in xs])
        if abs(vals[0] - 1.0) > 1e-12:
            raise ValidationError("q(0) must equal 1")
        if np.any(np.diff(vals) > 1e-12):
            raise ValidationError("q must be nonincreasing")
        if abs(vals[-1]) > 1e-12:
            raise ValidationError("q(x_bar) must equal 0")

    def __call__(self, x):
        return self._fn(x)

    def derivative(self, x):
        h = 1e-7 * max(1.0, self.x_bar)
        x = min(x, self.x_bar)
        if x - h < 0:
            return (self(x + h) - self(x)) / h
        return (self(x) - self(x - h)) / h


class LinearSurvival(SurvivalFn):
    """``q(X) = max(0, 1 - X / x_bar)``."""

    def __init__(self, x_bar: float):
        self.x_bar = float(x_bar)

    def __call__(self, x):
        return max(0.0, 1.0 - x / self.x_bar)

    def derivative(self, x):
        # one-sided from below at the kink
        return -1.0 / self.x_bar if x <= self.x_bar else 0.0


def _q(params: SimpleParams, q: SurvivalFn | None) -> SurvivalFn:
    return LinearSurvival(params.x_bar) if q is None else q


def g_next(S: float, params: SimpleParams, q: SurvivalFn | None = None) -> float:
    if S < 0:
        raise DomainError("S must be nonnegative")
    q = _q(params, q)
    return S + params.sigma * (1.0 - q(S)) * S


def g_prime(S: float, params: SimpleParams, q: SurvivalFn | None = None) -> float:
    q = _q(params, q)
    return 1.0 + params.sigma * (1.0 - q(S)) - params.sigma * q.derivative(S) * S


def satellite_value(S: float, params: SimpleParams, q: SurvivalFn | None = None) -> float:
    if S < 0:
        raise DomainError("S must be nonnegative")
    q = _q(params, q)
    d = 1.0 + params.r
    qs = q(S)
    return -params.F + params.pi * qs / d + params.pi * qs * q(g_next(S, params, q)) / d**2


def value_slope(S: float, params: SimpleParams, q: SurvivalFn | None = None) -> float:
    q = _q(params, q)
    d = 1.0 + params.r
    g = g_next(S, params, q)
    qs, dqs = q(S), q.derivative(S)
    qg, dqg = q(g), q.derivative(g)
    return params.pi * dqs / d + params.pi * (dqs * qg + qs * dqg * g_prime(S, params, q)) / d**2


def external_cost(S: float, params: SimpleParams, q: SurvivalFn | None = None) -> float:
    """External cost of one more satellite; the planner sets ``V(S) = EC(S)``."""
    return -S * value_slope(S, params, q)


def entry_bound(params: SimpleParams) -> float:
    d = 1.0 + params.r
    return params.pi / d * (1.0 + 1.0 / d)


def open_access_launch(params: SimpleParams, q: SurvivalFn | None = None, with_flag: bool = False):
    """Zero-profit launch level ``S_hat``.

    With ``with_flag`` returns ``(S_hat, saturated)``; saturation means the
    value is still positive at ``x_bar``.
    """
    q = _q(params, q)
    if params.F > entry_bound(params) * (1 + 1e-15):
        raise NoPositiveLaunchError(
            f"F={params.F} exceeds the value of the first satellite {entry_bound(params)}"
        )
    V = lambda s: satellite_value(s, params, q)
    if V(0.0) <= 0.0:
        out = (0.0, False)
    elif V(params.x_bar) > 0.0:
        out = (params.x_bar, True)
    else:
        out = (brentq(V, 0.0, params.x_bar, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps), False)
    return out if with_flag else out[0]


def _pieces(params: SimpleParams, q: SurvivalFn):
    """Intervals on which ``S * V(S)`` is smooth (split at the threshold)."""
    if params.sigma > 0:
        sk = kessler_threshold(params, q)
        if 0.0 < sk < params.x_bar:
            return [(0.0, sk), (sk, params.x_bar)]
    return [(0.0, params.x_bar)]


def planner_launch(params: SimpleParams, q: SurvivalFn | None = None, scan: int = 2001) -> float:
    """Fleet-value maximiser ``S*`` of ``S * V(S)`` on ``[0, x_bar]``.

    Solves ``V + S V' = 0`` on each smooth piece and compares candidates,
    piece endpoints included.
    """
    q = _q(params, q)
    obj = lambda s: s * satellite_value(s, params, q)
    foc = lambda s: satellite_value(s, params, q) + s * value_slope(s, params, q)
    cands = {0.0, params.x_bar}
    for lo, hi in _pieces(params, q):
        cands.update((lo, hi))
        # keep away from the kink so one-sided derivatives belong to the piece
        eps = 1e-12 * params.x_bar
        xs = np.linspace(lo + eps, hi - eps, scan)
        fs = np.array([foc(x) for x in xs])
        for i in np.nonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) < 0)[0]:
            cands.add(brentq(foc, xs[i], xs[i + 1], xtol=ROOT_XTOL))
    best = max(sorted(cands), key=obj)
    return float(best)


def planner_launch_search(params: SimpleParams, q: SurvivalFn | None = None) -> float:
    """Golden-section/Brent maximisation per smooth piece, used as a fallback and cross-check."""
    q = _q(params, q)
    obj = lambda s: s * satellite_value(s, params, q)
    cands = [0.0, params.x_bar]
    for lo, hi in _pieces(params, q):
        res = minimize_scalar(lambda s: -obj(s), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        cands += [lo, hi, float(res.x)]
    return max(cands, key=obj)


def kessler_threshold(params: SimpleParams, q: SurvivalFn | None = None) -> float:
    """``S_K`` with ``g(S_K) = x_bar``; equals ``x_bar`` in the degenerate case ``sigma = 0``."""
    if params.sigma == 0:
        return params.x_bar
    if q is None or isinstance(q, LinearSurvival):
        # (sqrt(1+4s) - 1) / (2s), written without cancellation
        return params.x_bar * 2.0 / (math.sqrt(1.0 + 4.0 * params.sigma) + 1.0)
    return kessler_threshold_numeric(params, q)


def kessler_threshold_numeric(params: SimpleParams, q: SurvivalFn | None = None) -> float:
    q = _q(params, q)
    return brentq(lambda s: g_next(s, params, q) - params.x_bar, 0.0, params.x_bar,
                  xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps)


@dataclass(frozen=True)
class KesslerConditions:
    oa_kessler: bool
    planner_kessler: bool
    oa_bound: float
    planner_bound: float
    S_K: float
    degenerate: bool


def kessler_conditions(params: SimpleParams, q: SurvivalFn | None = None) -> KesslerConditions:
    """Sufficient conditions for the threshold to be crossed.

    The bounds are the largest launch costs at which open access or the
    planner still crosses ``S_K``.
    """
    q = _q(params, q)
    sk = kessler_threshold(params, q)
    oa = params.pi / (1 + params.r) * q(sk)
    pl = params.pi / (1 + params.r) * (q(sk) + sk * q.derivative(sk))
    return KesslerConditions(
        oa_kessler=bool(oa >= params.F),
        planner_kessler=bool(pl >= params.F),
        oa_bound=oa,
        planner_bound=pl,
        S_K=sk,
        degenerate=params.sigma == 0,
    )


def linear_kessler_bounds(params: SimpleParams) -> tuple[float, float]:
    """Closed-form (open-access, planner) cost bounds under linear ``q``."""
    s = params.sigma
    root = math.sqrt(1.0 + 4.0 * s)
    k = params.pi / (1.0 + params.r)
    return k * (1.0 + 2.0 * s - root) / (2.0 * s), k * (1.0 + s - root) / s


@dataclass(frozen=True)
class DemandReport:
    operating_monotone_region: tuple[float, float]
    oa_kessler_eta: bool
    comparison_holds: bool
    oa_bound_eta: float
    comparison_lhs: float
    comparison_rhs: float


def downward_demand_extension(params: SimpleParams, q: SurvivalFn | None = None) -> DemandReport:
    """Kessler analysis when the per-satellite return falls with operating satellites."""
    if not params.eta > -1:
        raise DomainError("eta must exceed -1")
    q = _q(params, q)
    eta = params.eta
    if isinstance(q, LinearSurvival):
        upper = params.x_bar / 2.0
    else:
        dz = lambda s: q.derivative(s) * s + q(s)
        upper = params.x_bar if dz(params.x_bar) >= 0 else brentq(dz, 0.0, params.x_bar, xtol=ROOT_XTOL)
    sk = kessler_threshold(params, q)
    qk = q(sk)
    bound = params.pi * (1 + eta) / (1 + params.r) * sk**eta * qk ** (1 + eta)
    lhs = (sk * qk) ** eta
    rhs = 1.0 / (1.0 + eta)
    return DemandReport(
        operating_monotone_region=(0.0, upper),
        oa_kessler_eta=bool(bound >= params.F),
        comparison_holds=bool(lhs > rhs),
        oa_bound_eta=bound,
        comparison_lhs=lhs,
        comparison_rhs=rhs,
    )


def value_curves(params: SimpleParams, q: SurvivalFn | None = None, n: int = 501):
    """Rows ``(S, V, S*V, EC, segment)`` for drawing the simple-model diagram.

    ``segment`` increments where the external-cost curve jumps at the
    threshold, so consumers can leave a gap instead of joining the pieces.
    """
    q = _q(params, q)
    pieces = _pieces(params, q)
    rows = []
    for seg, (lo, hi) in enumerate(pieces):
        m = max(2, int(round(n * (hi - lo) / params.x_bar)))
        xs = np.linspace(lo, hi, m)
        if seg < len(pieces) - 1:
            xs = xs[:-1]
        if seg > 0:
            xs[0] = np.nextafter(lo, hi)
        for s in xs:
            v = satellite_value(float(s), params, q)
            rows.append((float(s), v, float(s) * v, external_cost(float(s), params, q), seg))
    return rows
