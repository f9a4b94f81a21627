from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orbital_econ import dynamics as dyn
from orbital_econ.errors import UnboundedEquilibriumError, ValidationError
from orbital_econ.open_access import (
    OpenAccessPolicy,
    equilibrium_launch_rate,
    find_steady_states,
    launch_rates,
    reduction_Y,
    satellite_isoquant,
    stability_margin,
    steady_state_residuals,
    target_level,
)
from orbital_econ.params import INITIAL_2020, OrbitState
from orbital_econ.phase import simulate
from orbital_econ.scenarios import calibrated_scenario, qualitative_scenario

QUAL = qualitative_scenario()
STATES = st.tuples(st.floats(0.0, 2.0), st.floats(0.0, 2.0))


def test_launch_from_empty_orbit_inverts_collision_law():
    p = QUAL.phys
    expected = -math.log1p(-QUAL.tau) / (p.alpha_ss + p.alpha_sd * p.m)
    X = equilibrium_launch_rate(OrbitState(0.0, 0.0), QUAL)
    assert X == pytest.approx(expected, rel=1e-10)
    L = dyn.collision_probability((X, p.m * X), p)
    assert L == pytest.approx(QUAL.tau, abs=1e-12)


def test_inaction_region_gives_zero():
    state = OrbitState(3.0, 2.0)
    nxt = dyn.step(state, 0.0, QUAL.phys)
    assert dyn.collision_probability(nxt.as_tuple(), QUAL.phys) > QUAL.tau
    assert equilibrium_launch_rate(state, QUAL) == 0.0


@given(STATES)
def test_next_period_probability_hits_target(state):
    S, D = state
    X = equilibrium_launch_rate((S, D), QUAL)
    nxt = dyn.step(OrbitState(S, D), X, QUAL.phys)
    L = dyn.collision_probability(nxt.as_tuple(), QUAL.phys)
    if X > 0:
        assert abs(L - QUAL.tau) < 1e-8
    else:
        assert L >= QUAL.tau - 1e-12


@given(STATES, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_launches_nonincreasing_in_state(state, dS, dD):
    S, D = state
    base = float(launch_rates(S, D, QUAL))
    assert float(launch_rates(S + dS, D, QUAL)) <= base + 1e-12
    assert float(launch_rates(S, D + dD, QUAL)) <= base + 1e-12


def test_equal_excess_returns_give_identical_policies():
    other = QUAL.with_overrides(pi=0.3, F=2.0, r=0.05)
    third = QUAL.with_overrides(pi=0.2, F=1.0, r=0.1)
    S, D = np.meshgrid(np.linspace(0, 2, 21), np.linspace(0, 2, 21))
    ref = launch_rates(S, D, QUAL)
    np.testing.assert_allclose(launch_rates(S, D, other), ref, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(launch_rates(S, D, third), ref, rtol=1e-12, atol=1e-15)


def test_unattainable_target_raises():
    sc = QUAL.with_overrides(pi=2.0)
    with pytest.raises(UnboundedEquilibriumError):
        launch_rates(0.0, 0.0, sc)


def test_launch_cap_binds():
    sc = QUAL.with_overrides(x_upper=0.05)
    assert float(launch_rates(0.0, 0.0, sc)) == 0.05


def test_qualitative_steady_states():
    recs = find_steady_states(QUAL)
    assert len(recs) == 2
    lo, hi = recs
    assert lo.stable and not hi.stable
    assert (lo.S_star, lo.D_star) == pytest.approx((0.767128, 0.232872), abs=1e-6)
    assert (hi.S_star, hi.D_star) == pytest.approx((0.582155, 0.417845), abs=1e-6)


def test_steady_state_residuals_and_stability_rule():
    for rec in find_steady_states(QUAL):
        rs, rd = steady_state_residuals(rec, QUAL)
        assert rs < 1e-8 and rd < 1e-8
        L = dyn.collision_probability((rec.S_star, rec.D_star), QUAL.phys)
        assert rec.X_star == pytest.approx(L * rec.S_star, rel=1e-8)
        assert rec.stable == (rec.y_prime < 0)
        # closed-form stability inequality at the root
        G_S, G_D = dyn.fragment_partials((rec.S_star, rec.D_star), QUAL.phys)
        L_S, L_D = dyn.collision_partials((rec.S_star, rec.D_star), QUAL.phys)
        lhs = G_D - QUAL.phys.delta
        rhs = (L_D / L_S) * (G_S + QUAL.phys.m * QUAL.tau)
        assert rec.stable == (lhs < rhs)
        assert np.sign(stability_margin(rec, QUAL)) == np.sign(rec.y_prime)


def test_reduction_roots_agree_with_planar_solver():
    from scipy.optimize import fsolve

    for rec in find_steady_states(QUAL):
        def eqs(v):
            S, D = v
            X = dyn.collision_probability((S, D), QUAL.phys) * S
            S1, D1 = dyn.transition(S, D, X, QUAL.phys)
            return [dyn.collision_probability((S, D), QUAL.phys) - QUAL.tau, D1 - D]

        S, D = fsolve(eqs, [rec.S_star * 1.01, rec.D_star * 0.99], xtol=1e-14)
        assert (S, D) == pytest.approx((rec.S_star, rec.D_star), abs=1e-7)


def test_reduction_sign_and_clamped_branch():
    s0 = float(satellite_isoquant(0.0, QUAL))
    assert s0 > 0 and reduction_Y(0.0, QUAL) > 0
    D_S = -math.log1p(-QUAL.tau) / QUAL.phys.alpha_sd
    for D in (D_S, 1.5 * D_S, 4.0):
        expected = -QUAL.phys.delta * D + dyn.fragment_formation((0.0, D), QUAL.phys)
        assert reduction_Y(D, QUAL) == pytest.approx(expected, rel=1e-12)


def test_no_autocatalysis_gives_at_most_one_state():
    sc = QUAL.with_overrides(beta_dd=0.0, beta_sd=0.0)
    assert len(find_steady_states(sc)) <= 1


def test_all_kessler_configuration_has_no_states():
    sc = QUAL.with_overrides(beta_dd=5.0)
    assert find_steady_states(sc) == []


@pytest.mark.parametrize("beta_dd", [0.6, 0.8, 1.0, 1.2])
def test_higher_debris_root_is_unstable(beta_dd):
    recs = find_steady_states(QUAL.with_overrides(beta_dd=beta_dd))
    assert len(recs) <= 2
    if len(recs) == 2:
        assert recs[0].stable and not recs[1].stable


def test_time_varying_mode_needs_frozen_period():
    with pytest.raises(ValidationError):
        find_steady_states(calibrated_scenario())


@pytest.mark.parametrize("eta", [0.0, -0.1])
def test_calibrated_path_stays_on_target(eta):
    sc = calibrated_scenario(eta=eta)
    traj = simulate(OpenAccessPolicy(sc), INITIAL_2020, 40, sc, stop_early=False)
    for k in range(len(traj.X) - 1):
        if traj.X[k] > 0:
            S1, D1 = traj.S[k + 1], traj.D[k + 1]
            L = dyn.collision_probability((S1, D1), sc.phys, sc.avoidance)
            target = target_level(sc, traj.t[k], S1)
            assert abs(L - target) < 1e-8


def test_calibrated_launches_wait_while_target_is_below_current_risk():
    sc = calibrated_scenario()
    traj = simulate(OpenAccessPolicy(sc), INITIAL_2020, 40, sc, stop_early=False)
    for k in range(len(traj.X) - 1):
        drift = dyn.step(OrbitState(traj.S[k], traj.D[k]), 0.0, sc.phys, sc.options)
        L0 = dyn.collision_probability(drift.as_tuple(), sc.phys, sc.avoidance)
        above = L0 >= target_level(sc, traj.t[k], drift.S)
        assert (traj.X[k] == 0.0) == above
    assert traj.X[0] == 0.0 and np.any(traj.X[:-1] > 0)
