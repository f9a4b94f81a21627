from __future__ import annotations

import numpy as np
import pytest

from orbital_econ import dynamics as dyn
from orbital_econ.errors import ValidationError
from orbital_econ.open_access import OpenAccessPolicy, find_steady_states, launch_rates
from orbital_econ.params import OrbitState
from orbital_econ.phase import simulate, split_steady_states
from orbital_econ.planner import (
    Grid2D,
    Multipliers,
    ValueField,
    bilinear,
    contraction_modulus,
    default_grid,
    external_cost_general,
    external_cost_steady_state,
    finite_horizon_seed,
    launch_cap,
    optimality_residual,
    planner_steady_state,
    solve_planner,
    steady_window,
)
from orbital_econ.scenarios import qualitative_scenario

QUAL = qualitative_scenario()


@pytest.fixture(scope="module")
def solved():
    grid = default_grid(QUAL, 64, 64)
    return solve_planner(QUAL, grid, tol_fraction=1e-6)


def test_grid_validation_and_parse():
    with pytest.raises(ValidationError):
        Grid2D(1.0, 1.0, 1, 4)
    with pytest.raises(ValidationError):
        Grid2D(-1.0, 1.0, 4, 4)
    g = Grid2D.parse("3,2,8,4")
    assert (g.s_max, g.d_max, g.n_s, g.n_d) == (3.0, 2.0, 8, 4)


def test_bilinear_reproduces_plane_and_clamps():
    g = Grid2D(2.0, 1.0, 5, 7)
    SS, DD = g.mesh()
    vals = 3.0 * SS - 2.0 * DD + 1.0
    S = np.array([0.3, 1.7, 0.0])
    D = np.array([0.55, 0.1, 1.0])
    np.testing.assert_allclose(bilinear(g, vals, S, D), 3 * S - 2 * D + 1, rtol=1e-14)
    assert bilinear(g, vals, np.array([5.0]), np.array([0.0]))[0] == pytest.approx(7.0)


def test_one_period_seed_by_hand():
    grid = Grid2D(2.0, 1.0, 6, 5)
    V = finite_horizon_seed(grid, 1, QUAL, sparse=(6, 5))
    e = QUAL.econ
    for i, S in enumerate(grid.S_nodes):
        L = dyn.collision_probability((S, 0.0), QUAL.phys)
        expected = e.pi * S + e.pi * S * (1 - L) / (1 + e.r)
        assert V.values[i, 0] == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_seed_positive_at_empty_orbit():
    grid = default_grid(QUAL, 16, 16)
    V = finite_horizon_seed(grid, 150, QUAL)
    assert V.values[0, 0] > 0


def test_seed_insensitive_to_horizon():
    grid = default_grid(QUAL, 16, 16)
    a = finite_horizon_seed(grid, 150, QUAL).values
    b = finite_horizon_seed(grid, 300, QUAL).values
    assert np.max(np.abs(a - b)) < 0.01 * np.max(np.abs(b))


def test_seed_rejects_zero_horizon():
    with pytest.raises(ValidationError):
        finite_horizon_seed(default_grid(QUAL, 8, 8), 0, QUAL)


def _decaying_fleet_value(sc, S, D, periods=3000):
    beta = 1 / (1 + sc.econ.r)
    pv = 0.0
    for t in range(periods):
        pv += beta**t * sc.econ.pi * S
        S, D = (float(v) for v in dyn.transition(S, D, 0.0, sc.phys))
    return pv


def test_unprofitable_launches_give_zero_policy():
    sc = QUAL.with_overrides(pi=0.04)
    assert sc.tau <= 0
    # paths from these points stay inside the grid, so clamping never applies
    points = [(0.5, 0.2), (1.0, 0.0), (0.2, 0.3)]
    pv = np.array([_decaying_fleet_value(sc, S, D) for S, D in points])
    errs = []
    for n in (12, 24, 48):
        res = solve_planner(sc, Grid2D(2.0, 1.0, n, n), tol_fraction=1e-9)
        assert np.all(res.X.values == 0.0)
        W = res.W(np.array([p[0] for p in points]), np.array([p[1] for p in points]))
        errs.append(np.max(np.abs(W - pv) / pv))
    # bilinear grid values converge to the closed-form present value at first order
    assert errs[1] < 0.6 * errs[0] and errs[2] < 0.6 * errs[1]
    assert errs[2] < 0.02


def test_sup_norms_contract_after_burn_in(solved):
    s = np.asarray(solved.sup_norms[10:])
    assert np.all(np.diff(s) < 0)
    assert contraction_modulus(solved.sup_norms) <= 1 / 1.05 + 0.05


def test_policy_dominated_by_open_access(solved):
    SS, DD = solved.X.grid.mesh()
    assert np.all(solved.X.values <= launch_rates(SS, DD, QUAL) + 1e-9)


def test_policy_monotone_up_to_one_cell(solved):
    X = solved.X.values
    tol = 1e-9 * np.max(X)
    # one-cell slack: compare each node with the node two cells back
    assert np.all(X[2:, :] <= X[:-2, :] + tol)
    assert np.all(X[:, 2:] <= X[:, :-2] + tol)


def test_value_nonincreasing_in_debris(solved):
    W = solved.W.values
    assert np.all(np.diff(W, axis=1) <= 1e-12 * np.max(np.abs(W)))


def test_value_nondecreasing_in_satellites(solved):
    W = solved.W.values
    assert np.all(np.diff(W, axis=0) >= -1e-12 * np.max(np.abs(W)))


def test_planner_steady_state_below_open_access(solved):
    ss = planner_steady_state(solved.X, QUAL)
    stable, _ = split_steady_states(find_steady_states(QUAL))
    assert ss.S < stable.S_star and ss.D < stable.D_star


def test_planner_collision_probability_approaches_from_below(solved):
    traj = simulate(solved.X, OrbitState(0.0, 0.0), 3000, QUAL)
    assert traj.termination == "converged"
    L_star = traj.L[-1]
    assert np.all(traj.L <= L_star * (1 + 1e-6))


def test_optimality_residual_small_and_external_factor_positive(solved):
    grid = solved.X.grid
    sp = solved.W.smooth()
    SS, DD = grid.mesh()
    res, xis = [], []
    for i in range(2, grid.n_s - 2):
        for j in range(2, grid.n_d - 2):
            X = solved.X.values[i, j]
            if X <= 0:
                continue
            r, xi = optimality_residual(OrbitState(SS[i, j], DD[i, j]), X, QUAL, solved.W, sp)
            res.append(abs(r))
            xis.append(xi)
    assert res, "no interior launch nodes"
    assert min(xis) >= 0
    assert max(res) < 1e-3 * QUAL.econ.F


def test_open_access_policy_has_no_external_factor():
    from orbital_econ.planner import implied_external_factor

    e = QUAL.econ
    for S, D in [(0.2, 0.05), (0.5, 0.1), (0.0, 0.0)]:
        X = float(launch_rates(S, D, QUAL))
        S1, D1 = dyn.transition(S, D, X, QUAL.phys)
        # open access values a launch at F, so the implied marginal value is F
        xi = implied_external_factor(S1, D1, e.F, QUAL)
        assert xi == pytest.approx(0.0, abs=1e-8)


def test_external_cost_congestion_only_when_debris_irrelevant():
    sc = QUAL.with_overrides(alpha_sd=1e-300, alpha_dd=1e-300, beta_sd=0.0, beta_dd=0.0, m=0.0, delta=1.0)
    st = OrbitState(0.4, 0.1)
    mec = external_cost_steady_state(st, sc)
    L, L_S = dyn.collision_probability((0.4, 0.1), sc.phys), dyn.collision_partials((0.4, 0.1), sc.phys)[0]
    assert mec.pollution_hazard_term == pytest.approx(0.0, abs=1e-250)
    beta = 1 / (1 + sc.econ.r)
    assert mec.congestion_term == pytest.approx(L_S * 0.4, rel=1e-14)
    assert mec.pollution_persistence_term == pytest.approx(
        beta * sc.phys.beta_ss * 0 + beta * dyn.fragment_partials((0.4, 0.1), sc.phys)[1] * (sc.tau - L - L_S * 0.4),
        abs=1e-15)


def test_full_decay_without_autocatalysis_kills_persistence():
    sc = QUAL.with_overrides(delta=1.0, beta_dd=0.0, beta_sd=0.0)
    mec = external_cost_steady_state(OrbitState(0.4, 0.04), sc)
    assert mec.pollution_persistence_term == 0.0


def test_terms_nonnegative_and_sum(solved):
    ss = planner_steady_state(solved.X, QUAL)
    mec = external_cost_steady_state(ss, QUAL)
    L, L_S = mec.intermediates["L"], mec.intermediates["L_S"]
    assert QUAL.tau >= L + L_S * ss.S
    assert mec.congestion_term >= 0 and mec.pollution_hazard_term >= 0
    assert mec.pollution_persistence_term >= 0
    assert abs(mec.xi_total - mec.terms_sum()) <= 1e-10


@pytest.fixture(scope="module")
def steady_no_launch_debris():
    sc = QUAL.with_overrides(m=0.0)
    res = solve_planner(sc, default_grid(sc, 32, 32), tol_fraction=1e-6)
    return sc, planner_steady_state(res.X, sc)


def test_general_form_matches_steady_form_without_launch_debris(steady_no_launch_debris):
    sc, ss = steady_no_launch_debris
    a = external_cost_steady_state(ss, sc)
    b = external_cost_general(*steady_window(ss, sc), sc)
    assert a.label == "steady-state"
    assert b.xi_total == pytest.approx(a.xi_total, abs=1e-8)


def test_general_form_short_run_hazard_vanishes_without_launch_debris(steady_no_launch_debris):
    sc, ss = steady_no_launch_debris
    b = external_cost_general(*steady_window(ss, sc), sc)
    n = b.intermediates
    beta = 1 / (1 + sc.econ.r)
    ratio = (n["Gamma1"]) / (n["Gamma1_next"])
    assert b.pollution_hazard_term * sc.econ.F == pytest.approx(beta * ratio * n["Gamma1_next"] * n["alpha2_next"], rel=1e-12)
    assert b.corner_adjustment_term == 0.0
    assert b.label == "interior-path"


def test_general_form_rejects_inconsistent_window():
    st = OrbitState(0.4, 0.04)
    with pytest.raises(ValidationError):
        external_cost_general([st, st, OrbitState(0.5, 0.04)], [0.0, 0.0], QUAL)


def test_corner_multipliers_enter_only_the_corner_term(solved):
    ss = planner_steady_state(solved.X, QUAL)
    states, launches = steady_window(ss, QUAL)
    a = external_cost_general(states, launches, QUAL)
    b = external_cost_general(states, launches, QUAL, Multipliers(gamma_X=0.01))
    assert a.congestion_term == b.congestion_term
    assert b.corner_adjustment_term != 0.0
    assert b.label == "with-corners"


def test_launch_cap_doubles_empty_orbit_launch():
    x0 = float(launch_rates(0.0, 0.0, QUAL))
    assert launch_cap(QUAL) == pytest.approx(2 * x0)
    assert launch_cap(QUAL.with_overrides(x_upper=0.01)) == 0.01
