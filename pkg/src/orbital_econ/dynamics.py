"""Collision probability, fragment formation and the one-period transition.

Every function accepts either an :class:`OrbitState` or an ``(S, D)`` pair of
floats or numpy arrays, and broadcasts over arrays. ``1 - exp(-x)`` is always
evaluated as ``-expm1(-x)`` because ``alpha * count`` is of order 1e-4.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import DomainError
from .params import DynamicsOptions, OrbitState, PhysicalParams

_NO_OPTIONS = DynamicsOptions()


def _unpack(state):
    if isinstance(state, OrbitState):
        return state.S, state.D
    S, D = state
    return _check(S, "S"), _check(D, "D")


def _check(x, name):
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise DomainError(f"{name} must be nonnegative")
    return x if np.ndim(x) == 0 else arr


def _onem(x):
    """1 - exp(-x) without cancellation."""
    return -np.expm1(-x)


def _fail_rates(phys: PhysicalParams, avoidance: bool):
    if avoidance:
        return 1.0 - phys.kappa_ss, 1.0 - phys.kappa_sd
    return 1.0, 1.0


def collision_probability(state, phys: PhysicalParams, avoidance: bool = False):
    """Per-satellite collision probability ``L(S, D)``.

    With avoidance the satellite-satellite and satellite-debris channels are
    thinned by the avoidance failure rates and combined by inclusion-exclusion.
    """
    S, D = _unpack(state)
    if not avoidance:
        return _onem(phys.alpha_ss * S + phys.alpha_sd * D)
    c1, c2 = _fail_rates(phys, True)
    p_ss = _onem(phys.alpha_ss * S)
    p_sd = _onem(phys.alpha_sd * D)
    return c1 * p_ss + c2 * p_sd - c1 * c2 * p_ss * p_sd


def fragment_formation(state, phys: PhysicalParams, fragment_avoidance: bool = False):
    """New fragments ``G(S, D)`` from all collisions in one period.

    ``fragment_avoidance`` scales the two satellite channels by the avoidance
    failure rates so that avoided encounters produce no debris.
    """
    S, D = _unpack(state)
    f1, f2 = _fail_rates(phys, fragment_avoidance)
    return (
        phys.beta_ss * f1 * _onem(phys.alpha_ss * S) * S
        + phys.beta_sd * f2 * _onem(phys.alpha_sd * D) * S
        + phys.beta_dd * _onem(phys.alpha_dd * D) * D
    )


def collision_partials(state, phys: PhysicalParams, avoidance: bool = False):
    """Analytic ``(L_S, L_D)``."""
    S, D = _unpack(state)
    if not avoidance:
        surv = np.exp(-(phys.alpha_ss * S + phys.alpha_sd * D))
        return phys.alpha_ss * surv, phys.alpha_sd * surv
    c1, c2 = _fail_rates(phys, True)
    e_ss = np.exp(-phys.alpha_ss * S)
    e_sd = np.exp(-phys.alpha_sd * D)
    L_S = c1 * phys.alpha_ss * e_ss * (1.0 - c2 * _onem(phys.alpha_sd * D))
    L_D = c2 * phys.alpha_sd * e_sd * (1.0 - c1 * _onem(phys.alpha_ss * S))
    return L_S, L_D


def fragment_partials(state, phys: PhysicalParams, fragment_avoidance: bool = False):
    """Analytic ``(G_S, G_D)``."""
    S, D = _unpack(state)
    f1, f2 = _fail_rates(phys, fragment_avoidance)
    a_ss, a_sd, a_dd = phys.alpha_ss, phys.alpha_sd, phys.alpha_dd
    G_S = (
        phys.beta_ss * f1 * (_onem(a_ss * S) + a_ss * S * np.exp(-a_ss * S))
        + phys.beta_sd * f2 * _onem(a_sd * D)
    )
    G_D = phys.beta_sd * f2 * a_sd * np.exp(-a_sd * D) * S + phys.beta_dd * (
        _onem(a_dd * D) + a_dd * D * np.exp(-a_dd * D)
    )
    return G_S, G_D


def surviving_stock(S, D, phys: PhysicalParams, options: DynamicsOptions = _NO_OPTIONS):
    """Satellites carried into next period before any launches."""
    L = collision_probability((S, D), phys, options.avoidance)
    kept = S * (1.0 - L)
    if options.turnover:
        kept = kept * (1.0 - phys.mu)
    return kept


def next_debris_base(S, D, phys: PhysicalParams, options: DynamicsOptions = _NO_OPTIONS):
    """Next-period debris before launch debris is added."""
    return D * (1.0 - phys.delta) + fragment_formation((S, D), phys, options.fragment_avoidance)


def transition(S, D, X, phys: PhysicalParams, options: DynamicsOptions = _NO_OPTIONS):
    """Vectorised laws of motion; returns ``(S', D')``."""
    S = _check(S, "S")
    D = _check(D, "D")
    if np.any(np.asarray(X) < 0):
        raise DomainError("launch rate must be nonnegative")
    return (
        surviving_stock(S, D, phys, options) + X,
        next_debris_base(S, D, phys, options) + phys.m * X,
    )


def step(
    state: OrbitState,
    launch_rate: float,
    phys: PhysicalParams,
    options: DynamicsOptions = _NO_OPTIONS,
    x_upper: float | None = None,
) -> OrbitState:
    if launch_rate < 0:
        raise DomainError(f"launch rate must be nonnegative, got {launch_rate}")
    if x_upper is not None and launch_rate > x_upper:
        raise DomainError(f"launch rate {launch_rate} exceeds cap {x_upper}")
    S1, D1 = transition(state.S, state.D, launch_rate, phys, options)
    return OrbitState(float(S1), float(D1))


def qualitative_normalization(phys: PhysicalParams, tau: float, g01: float = 0.1) -> PhysicalParams:
    """Rescale units so that ``L(1, 0) = tau`` and ``G(0, 1) = g01``.

    This is the display convention used for qualitative phase portraits;
    only ``alpha_ss`` and ``beta_dd`` are changed.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError("tau must lie in (0, 1)")
    return replace(
        phys,
        alpha_ss=float(-np.log1p(-tau)),
        beta_dd=float(g01 / _onem(phys.alpha_dd)),
    )
