from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orbital_econ import dynamics as dyn
from orbital_econ.open_access import OpenAccessPolicy, SteadyStateRecord, find_steady_states
from orbital_econ.params import INITIAL_2020, OrbitState
from orbital_econ.phase import (
    BasinClass,
    DivergenceRule,
    classify_basin,
    detect_overshoot,
    direction_field,
    kessler_time,
    nullclines,
    one_step_preimage,
    polyline_distance,
    sample_action_region,
    simulate,
    split_steady_states,
    sweep_kessler_times,
    terminal_regime,
)
from orbital_econ.planner import default_grid, planner_steady_state, solve_planner
from orbital_econ.scenarios import calibrated_scenario, qualitative_scenario

QUAL = qualitative_scenario()
POLICY = OpenAccessPolicy(QUAL)
STABLE, UNSTABLE = split_steady_states(find_steady_states(QUAL))
S_NODES = np.linspace(0.0, 1.5, 25)
D_NODES = np.linspace(0.0, 1.2, 25)


def test_first_launch_from_empty_orbit_hits_target():
    traj = simulate(POLICY, OrbitState(0.0, 0.0), 50, QUAL)
    assert traj.X[0] > 0
    assert abs(traj.L[1] - QUAL.tau) < 1e-8


@given(st.floats(0.0, 1.5), st.floats(0.0, 1.0))
@settings(max_examples=25)
def test_trajectory_replay(S, D):
    traj = simulate(POLICY, OrbitState(S, D), 200, QUAL)
    for k in range(len(traj.t) - 1):
        S1, D1 = dyn.transition(traj.S[k], traj.D[k], traj.X[k], QUAL.phys)
        assert abs(S1 - traj.S[k + 1]) <= 1e-10 * max(1.0, abs(S1))
        assert abs(D1 - traj.D[k + 1]) <= 1e-10 * max(1.0, abs(D1))


def test_deep_kessler_start_grows_debris_without_launches():
    sc = QUAL.with_overrides(beta_dd=5.0)
    pol = OpenAccessPolicy(sc)
    traj = simulate(pol, OrbitState(0.5, 3.0), 60, sc, stop_early=False)
    D = traj.D[np.isfinite(traj.D)]
    assert np.all(np.diff(D) > 0)
    X = traj.X[:-1]
    last_launch = np.flatnonzero(X > 0)
    T = last_launch[-1] + 1 if last_launch.size else 0
    assert T < len(X) and np.all(X[T:] == 0.0)


def test_stable_node_classified_stable():
    bm = classify_basin(POLICY, QUAL, [STABLE.S_star], [STABLE.D_star])
    assert bm.classes[0, 0] == BasinClass.STABLE_BASIN


def test_basin_partition_is_exhaustive():
    bm = classify_basin(POLICY, QUAL, S_NODES, D_NODES)
    counts = bm.counts()
    assert sum(counts.values()) == S_NODES.size * D_NODES.size
    assert set(np.unique(bm.classes)) <= {int(c) for c in BasinClass}
    assert counts["UNDETERMINED"] == 0
    assert counts["KESSLER"] > 0 and counts["STABLE_BASIN"] > 0


def test_no_autocatalysis_means_no_kessler_nodes():
    sc = QUAL.with_overrides(beta_dd=0.0, beta_sd=0.0)
    bm = classify_basin(OpenAccessPolicy(sc), sc, np.linspace(0, 3, 24), np.linspace(0, 3, 24))
    assert bm.counts()["KESSLER"] == 0


def test_higher_excess_return_never_enlarges_basin():
    base = classify_basin(POLICY, QUAL, S_NODES, D_NODES).classes == BasinClass.STABLE_BASIN
    for pi in (0.155, 0.16):
        sc = QUAL.with_overrides(pi=pi)
        recs = find_steady_states(sc)
        if not recs:
            continue
        other = classify_basin(OpenAccessPolicy(sc), sc, S_NODES, D_NODES).classes == BasinClass.STABLE_BASIN
        assert np.all(other <= base)
        base = other


def test_planner_basin_contains_open_access_basin():
    res = solve_planner(QUAL, default_grid(QUAL, 64, 64), tol_fraction=1e-6)
    ss = planner_steady_state(res.X, QUAL)
    rec = SteadyStateRecord(ss.S, ss.D, float(res.X(np.array([ss.S]), np.array([ss.D]))[0]), True, float("nan"))
    oa = classify_basin(POLICY, QUAL, S_NODES, D_NODES).classes == BasinClass.STABLE_BASIN
    pl = classify_basin(res.X, QUAL, S_NODES, D_NODES, stable=rec, unstable=UNSTABLE).classes
    assert np.all(pl[oa] == BasinClass.STABLE_BASIN)


def test_satellite_nullcline_through_steady_states():
    S = np.linspace(0.0, 1.5, 121)
    D = np.linspace(0.0, 1.2, 121)
    sat, _ = nullclines(POLICY, QUAL, S, D)
    cell = np.hypot(S[1] - S[0], D[1] - D[0])
    for rec in (STABLE, UNSTABLE):
        assert polyline_distance(sat, (rec.S_star, rec.D_star)) < cell


def test_debris_nullcline_has_two_branches():
    S = np.linspace(0.0, 1.5, 61)
    D = np.linspace(0.0, 1.5, 61)
    _, dD = direction_field(POLICY, QUAL, S, D)
    crossings = [int(np.count_nonzero(np.diff(np.sign(col)) != 0)) for col in dD]
    low = [c for s, c in zip(S, crossings) if s < UNSTABLE.S_star]
    high = [c for s, c in zip(S, crossings) if s > 1.0]
    assert all(c == 2 for c in low)
    assert all(c == 0 for c in high)


def test_field_scale_does_not_move_contours():
    a = direction_field(POLICY, QUAL, S_NODES, D_NODES, h=10.0)
    b = direction_field(POLICY, QUAL, S_NODES, D_NODES, h=20.0)
    np.testing.assert_allclose(b[0], a[0] / 2, rtol=1e-14, atol=1e-300)
    sat_a, deb_a = nullclines(POLICY, QUAL, S_NODES, D_NODES, h=10.0)
    sat_b, deb_b = nullclines(POLICY, QUAL, S_NODES, D_NODES, h=20.0)
    for x, y in zip(sat_a + deb_a, sat_b + deb_b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)


def test_no_overshoot_from_steady_state():
    traj = simulate(POLICY, OrbitState(STABLE.S_star, STABLE.D_star), 100, QUAL)
    res = detect_overshoot(traj, STABLE)
    assert res.applicable and not res.any


def test_overshoot_not_applicable_without_convergence():
    traj = simulate(POLICY, OrbitState(0.0, 0.0), 3, QUAL, stop_early=False)
    assert not detect_overshoot(traj, STABLE).applicable


def test_random_action_region_starts_overshoot():
    inits = sample_action_region(QUAL, 100, seed=0)
    assert len(inits) == 100
    hits = 0
    for s in inits:
        res = detect_overshoot(simulate(POLICY, s, 5000, QUAL), STABLE)
        assert res.applicable
        hits += res.any
    assert hits >= 99


def test_one_step_preimage_does_not_overshoot():
    start = one_step_preimage(STABLE, QUAL, 0.5 * STABLE.X_star)
    traj = simulate(POLICY, start, 100, QUAL)
    assert traj.S[1] == pytest.approx(STABLE.S_star, rel=1e-9)
    assert traj.D[1] == pytest.approx(STABLE.D_star, rel=1e-9)
    assert not detect_overshoot(traj, STABLE).any


@pytest.mark.parametrize("seed", range(8))
def test_permanent_zero_launches_iff_divergence(seed):
    rng = np.random.default_rng(seed)
    sc = QUAL.with_overrides(beta_dd=QUAL.phys.beta_dd * rng.uniform(0.8, 1.2),
                             delta=rng.uniform(0.25, 0.35))
    init = OrbitState(rng.uniform(0, 1.2), rng.uniform(0, 0.6))
    assert terminal_regime(OpenAccessPolicy(sc), init, sc).agree


def test_divergence_threshold_rule():
    rule = DivergenceRule()
    assert rule.threshold(STABLE, UNSTABLE) == max(10 * UNSTABLE.D_star, 100 * STABLE.D_star)
    assert rule.threshold(None, None, 3.0) == 300.0


def test_kessler_time_large_debris_fragmentation():
    res = kessler_time(calibrated_scenario(beta_dd=500.0))
    assert res.year is not None and res.year <= 2023


def test_kessler_time_slow_growth_beyond_horizon():
    res = kessler_time(calibrated_scenario(a=0.025))
    assert res.year is None or res.year > 2184


def test_kessler_time_fast_growth_window():
    res = kessler_time(calibrated_scenario(a=0.08, beta_dd=326.0))
    assert res.year is not None and 2035 <= res.year <= 2050


@pytest.mark.slow
def test_demand_elasticity_delays_kessler_time():
    out = sweep_kessler_times(calibrated_scenario(a=0.03), "eta", [0.0, -0.1, -0.2])
    years = [y for _, y in out]
    assert all(y is not None for y in years)
    assert years == sorted(years)
    for year, target in zip(years, (2184, 2389, 2592)):
        elapsed, target_elapsed = year - 2020, target - 2020
        assert abs(elapsed - target_elapsed) <= 0.1 * target_elapsed, (year, target)


def test_single_value_sweep_matches_direct_call():
    sc = calibrated_scenario()
    [(v, year)] = sweep_kessler_times(sc, "beta_dd", [400.0])
    assert v == 400.0
    assert year == kessler_time(sc.with_overrides(beta_dd=400.0)).year


def test_sweep_is_nonincreasing():
    out = sweep_kessler_times(calibrated_scenario(), "growth_a", [0.04, 0.06, 0.1])
    years = [y for _, y in out]
    assert all(y is not None for y in years)
    assert years == sorted(years, reverse=True)


def test_kessler_path_starts_at_initial_state():
    res = kessler_time(calibrated_scenario(beta_dd=500.0))
    assert (res.path_S[0], res.path_D[0]) == INITIAL_2020.as_tuple()
