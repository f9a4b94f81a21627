"""Ready-made scenarios: a qualitative one in normalised units and the calibrated shell."""
from __future__ import annotations

import math

from .params import (
    INITIAL_2020,
    TABLE4_COST_GROWTH,
    TABLE4_GAMMAS,
    TABLE4_PHYSICAL,
    TIME_VARYING,
    EconParams,
    PhysicalParams,
    Scenario,
)

# 2019 revenue and cost levels (billion USD) anchor the calibrated payoff and cost paths.
REVENUE_2019 = 27.32
COST_2019 = 119.16


def qualitative_scenario(**overrides) -> Scenario:
    """Normalised units in which ``L(1, 0)`` equals the excess return 0.1.

    Debris-debris fragmentation is strongly convex, so open access has two
    interior steady states: a stable one near ``(0.77, 0.23)`` and an
    unstable one near ``(0.58, 0.42)``.
    """
    tau = 0.1
    alpha_dd = 0.5
    phys = PhysicalParams(
        alpha_ss=-math.log1p(-tau),
        alpha_sd=-math.log1p(-tau),
        alpha_dd=alpha_dd,
        beta_ss=0.5,
        beta_sd=0.2,
        beta_dd=0.5 / -math.expm1(-alpha_dd),
        delta=0.3,
        m=0.05,
    )
    econ = EconParams(pi=0.15, F=1.0, r=0.05)
    sc = Scenario(econ=econ, phys=phys)
    return sc.with_overrides(**overrides) if overrides else sc


def factor_productivity(eta: float, level: float = REVENUE_2019, s0: float = INITIAL_2020.S) -> float:
    """Productivity that makes the payoff at the initial fleet equal ``level``."""
    return math.exp(math.log(level) - math.log1p(eta) + eta * math.log(s0))


def calibrated_scenario(a: float = 0.03, eta: float = 0.0, beta_dd: float | None = None,
                        beta_sd: float | None = None, **overrides) -> Scenario:
    """Time-varying scenario for the 600-650 km shell starting in 2020."""
    g0, g1, g2 = TABLE4_GAMMAS
    econ = EconParams(
        pi=factor_productivity(eta),
        F=COST_2019,
        r=0.05,
        a=a,
        b=TABLE4_COST_GROWTH,
        eta=eta,
        gamma0=g0,
        gamma1=g1,
        gamma2=g2,
    )
    sc = Scenario(
        econ=econ,
        phys=TABLE4_PHYSICAL,
        mode=TIME_VARYING,
        start_year=2020,
        avoidance=True,
        turnover=True,
        fragment_avoidance=True,
    )
    kw = dict(overrides)
    if beta_dd is not None:
        kw["beta_dd"] = beta_dd
    if beta_sd is not None:
        kw["beta_sd"] = beta_sd
    return sc.with_overrides(**kw) if kw else sc
