from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from orbital_econ import simple_model as sm
from orbital_econ.errors import DomainError, NoPositiveLaunchError, ValidationError

A = sm.PANEL_A
B = sm.PANEL_B


def _value_oracle(S, p):
    """Three-period value written out from scratch with linear survival."""
    q = lambda x: max(0.0, 1.0 - x / p.x_bar)
    g = S + p.sigma * (1 - q(S)) * S
    return -p.F + p.pi * q(S) / (1 + p.r) + p.pi * q(S) * q(g) / (1 + p.r) ** 2


params = st.builds(
    sm.SimpleParams,
    pi=st.floats(0.5, 2.0),
    r=st.floats(0.01, 0.2),
    F=st.floats(0.05, 1.5),
    x_bar=st.floats(0.5, 20.0),
    sigma=st.floats(0.0, 50.0),
)


def test_g_next_examples():
    assert sm.g_next(0.0, A) == 0.0
    assert sm.g_next(2.0, A) == pytest.approx(3.0, rel=1e-15)
    assert sm.g_next(2.7, replace(A, sigma=0.0)) == 2.7


def test_value_at_empty_orbit():
    assert sm.satellite_value(0.0, A) == pytest.approx(-0.35 + 1 / 1.05 + 1 / 1.05**2, rel=1e-15)
    assert sm.satellite_value(0.0, A) == pytest.approx(1.509, abs=5e-4)


@pytest.mark.parametrize("p", [A, B])
def test_value_matches_hand_oracle(p):
    for S in np.linspace(0, p.x_bar, 41):
        assert sm.satellite_value(float(S), p) == pytest.approx(_value_oracle(float(S), p), abs=1e-14)


def test_value_strictly_decreasing_on_open_interval():
    S = np.linspace(1e-3, A.x_bar - 1e-3, 400)
    V = np.array([sm.satellite_value(float(s), A) for s in S])
    assert np.all(np.diff(V) < 0)


def test_marginal_entry_gives_zero_launch():
    p = replace(A, F=sm.entry_bound(A))
    assert sm.open_access_launch(p) == pytest.approx(0.0, abs=1e-10)


def test_prohibitive_cost_raises():
    with pytest.raises(NoPositiveLaunchError):
        sm.open_access_launch(replace(A, F=2.0))


def test_open_access_panel_a_golden():
    # golden value from an independent bisection of the hand oracle
    assert sm.open_access_launch(A) == pytest.approx(3.1625, abs=1e-10)
    assert sm.open_access_launch(A) > sm.kessler_threshold(A)


def test_planner_panel_a_avoids_threshold():
    assert sm.planner_launch(A) < sm.kessler_threshold(A)


def test_planner_panel_b_reaches_threshold():
    # published classification; see the decisions ledger for why the global maximiser disagrees
    assert sm.planner_launch(B) >= sm.kessler_threshold(B)


@given(st.floats(0.05, 1.9), st.floats(0.5, 20.0))
def test_planner_closed_form_without_fragmentation(F, x_bar):
    # S V(S) = S (-F + k1 q + k2 q^2) with q = 1 - S / x_bar; the first-order
    # condition is 3 k2 u^2 - (2 k1 + 4 k2) u + (k1 + k2 - F) = 0 in u = S / x_bar
    p = sm.SimpleParams(pi=1.0, r=0.05, F=F, x_bar=x_bar, sigma=0.0)
    k1, k2 = 1 / 1.05, 1 / 1.05**2
    b = 2 * k1 + 4 * k2
    u = (b - math.sqrt(b * b - 12 * k2 * (k1 + k2 - F))) / (6 * k2)
    expected = x_bar * max(u, 0.0)  # launches cannot be negative
    assert sm.planner_launch(p) == pytest.approx(expected, abs=1e-9 * x_bar)
    assert sm.planner_launch_search(p) == pytest.approx(expected, abs=1e-6 * x_bar)


def test_threshold_examples():
    assert sm.kessler_threshold(sm.SimpleParams(1, 0.05, 0.35, 1.0, 1.0)) == pytest.approx(0.618034, abs=1e-6)
    assert sm.kessler_threshold(A) == pytest.approx(5 * (math.sqrt(6) - 1) / 2.5, rel=1e-14)
    assert sm.kessler_threshold(A) == pytest.approx(2.899, abs=5e-4)
    assert sm.kessler_threshold(replace(A, sigma=1e-10)) == pytest.approx(A.x_bar, abs=1e-6 * A.x_bar)


@pytest.mark.parametrize("sigma", np.logspace(-3, 2, 31))
def test_closed_form_threshold_matches_root_finder(sigma):
    p = replace(A, sigma=float(sigma))
    assert sm.kessler_threshold(p) == pytest.approx(sm.kessler_threshold_numeric(p), abs=1e-9 * p.x_bar)


def test_kessler_conditions_panels():
    a = sm.kessler_conditions(A)
    assert a.oa_bound == pytest.approx(0.4002, abs=1e-4)
    assert a.planner_bound == pytest.approx(-0.152, abs=1e-3)
    assert (a.oa_kessler, a.planner_kessler) == (True, False)
    b = sm.kessler_conditions(B)
    assert b.oa_bound == pytest.approx(1 / 1.05 * 32 / 40, rel=1e-12)
    assert b.planner_bound == pytest.approx(1 / 1.05 * 12 / 20, rel=1e-12)
    assert (b.oa_kessler, b.planner_kessler) == (True, True)


def test_prohibitive_cost_kills_both_conditions():
    c = sm.kessler_conditions(replace(B, F=1.0))
    assert (c.oa_kessler, c.planner_kessler) == (False, False)


@pytest.mark.parametrize("p", [A, B, replace(A, sigma=5.0)])
def test_bounds_match_closed_form(p):
    c = sm.kessler_conditions(p)
    oa, pl = sm.linear_kessler_bounds(p)
    assert c.oa_bound == pytest.approx(oa, rel=1e-12)
    assert c.planner_bound == pytest.approx(pl, rel=1e-9, abs=1e-12)


def test_demand_extension_examples():
    base = sm.SimpleParams(1.0, 0.05, 0.35, 1.0, 1.0)
    assert sm.downward_demand_extension(replace(base, eta=-0.3)).comparison_holds
    assert not sm.downward_demand_extension(replace(base, eta=-0.6)).comparison_holds


@given(params)
def test_demand_extension_without_elasticity_matches_baseline(p):
    rep = sm.downward_demand_extension(p)
    c = sm.kessler_conditions(p)
    assert rep.oa_bound_eta == c.oa_bound
    assert rep.oa_kessler_eta == c.oa_kessler


@given(params)
def test_threshold_invariants(p):
    # below about 1e-8 the gap x_bar - S_K is lost to rounding
    assume(p.sigma > 1e-6)
    sk = sm.kessler_threshold(p)
    assert 0 < sk < p.x_bar
    assert sm.g_next(sk, p) == pytest.approx(p.x_bar, abs=1e-10 * max(1.0, p.x_bar))


@given(params)
def test_planner_launches_no_more_than_open_access(p):
    assume(p.F < sm.entry_bound(p))
    oa = sm.open_access_launch(p)
    pl = sm.planner_launch(p)
    assert pl <= oa + 1e-12
    if 0 < pl < p.x_bar and 0 < oa < p.x_bar:
        assert pl < oa


@given(params)
def test_planner_condition_implies_open_access_condition(p):
    c = sm.kessler_conditions(p)
    if c.planner_kessler:
        assert c.oa_kessler


@given(params)
def test_planner_launch_is_global_maximiser(p):
    assume(p.F < sm.entry_bound(p))
    obj = lambda s: s * sm.satellite_value(s, p)
    best = sm.planner_launch(p)
    grid = np.linspace(0, p.x_bar, 801)
    assert obj(best) >= max(obj(float(s)) for s in grid) - 1e-9


def test_custom_survival_function_is_probed():
    with pytest.raises(ValidationError):
        sm.SurvivalFn(lambda x: 0.5, 1.0)
    q = sm.SurvivalFn(lambda x: max(0.0, 1.0 - x), 1.0)
    p = sm.SimpleParams(1.0, 0.05, 0.35, 1.0, 1.0)
    assert sm.open_access_launch(p, q) == pytest.approx(sm.open_access_launch(p), abs=1e-9)
    assert sm.kessler_threshold(p, q) == pytest.approx(sm.kessler_threshold(p), abs=1e-10)


def test_invalid_parameters():
    with pytest.raises(ValidationError):
        sm.SimpleParams(1.0, 0.05, 0.35, 5.0, -1.0)
    with pytest.raises(DomainError):
        sm.SimpleParams(1.0, 0.05, 0.35, 5.0, 1.0, eta=-1.0)
    with pytest.raises(DomainError):
        sm.g_next(-1.0, A)


def test_value_curves_leave_gap_at_threshold():
    rows = sm.value_curves(A, n=201)
    segs = {r[4] for r in rows}
    assert segs == {0, 1}
    sk = sm.kessler_threshold(A)
    assert all(r[0] < sk for r in rows if r[4] == 0)
    assert all(r[0] > sk for r in rows if r[4] == 1)
