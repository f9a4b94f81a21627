"""Trajectories, basins of attraction, nullclines, overshooting and Kessler times.

A policy is any callable ``policy(S, D, t) -> X`` that accepts numpy lanes.
Forward simulation runs many lanes at once; each lane stops as soon as it
either settles in the stable ball or trips the divergence rule.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import root
from skimage import measure

from . import dynamics as dyn
from .errors import UnboundedEquilibriumError, ValidationError
from .open_access import (
    OpenAccessPolicy,
    SteadyStateRecord,
    find_steady_states,
    launch_rates,
    satellite_isoquant,
    target_level,
)
from .params import CONSTANT, OrbitState, Scenario


class BasinClass(enum.IntEnum):
    UNDETERMINED = 0
    STABLE_BASIN = 1
    KESSLER = 2


@dataclass(frozen=True)
class DivergenceRule:
    """Finite-time stand-in for unbounded debris growth.

    A lane diverges once debris has stayed above ``threshold`` while growing
    with zero launches for ``persistence`` consecutive periods.
    """

    unstable_factor: float = 10.0
    stable_factor: float = 100.0
    persistence: int = 20
    stable_ball: float = 0.01
    fallback_factor: float = 100.0

    def threshold(self, stable: SteadyStateRecord | None, unstable: SteadyStateRecord | None,
                  d_init: float = 0.0) -> float:
        cands = []
        if unstable is not None:
            cands.append(self.unstable_factor * unstable.D_star)
        if stable is not None:
            cands.append(self.stable_factor * stable.D_star)
        if not cands:
            cands.append(self.fallback_factor * max(d_init, 1.0))
        return max(cands)

    def as_dict(self) -> dict:
        return dict(unstable_factor=self.unstable_factor, stable_factor=self.stable_factor,
                    persistence=self.persistence, stable_ball=self.stable_ball,
                    fallback_factor=self.fallback_factor)


def split_steady_states(records):
    """(lowest-debris stable record, lowest-debris unstable record above it)."""
    stable = next((r for r in records if r.stable), None)
    unstable = None
    for r in records:
        if not r.stable and (stable is None or r.D_star > stable.D_star):
            unstable = r
            break
    return stable, unstable


# --------------------------------------------------------------------------
# trajectories

CONVERGE_TOL = 1e-10
CONVERGE_RUN = 10


@dataclass
class Trajectory:
    t: np.ndarray
    X: np.ndarray
    S: np.ndarray
    D: np.ndarray
    L: np.ndarray
    termination: str
    scenario: Scenario | None = field(default=None, repr=False)

    def rows(self):
        return zip(self.t.tolist(), self.X.tolist(), self.S.tolist(), self.D.tolist(), self.L.tolist())

    @property
    def final(self) -> OrbitState:
        return OrbitState(float(self.S[-1]), float(self.D[-1]))


def simulate(policy, init: OrbitState, periods: int, scenario: Scenario, t0: float = 0,
             rule: DivergenceRule | None = None, d_threshold: float | None = None,
             stop_early: bool = True, extra_after_divergence: int = 0) -> Trajectory:
    """Iterate ``policy`` and the laws of motion from ``init``.

    Row ``k`` holds ``(t, X_t, S_t, D_t, L_t)``; the last row is the state
    after the final launch and carries ``X = nan``. Early exit on convergence
    (state change below 1e-10 for 10 periods) or, when ``d_threshold`` is
    given, on the divergence rule.
    """
    phys, opts = scenario.phys, scenario.options
    rule = rule or DivergenceRule()
    S, D = float(init.S), float(init.D)
    ts, Xs, Ss, Ds = [], [], [], []
    calm = 0
    streak = 0
    reason = "horizon"
    extra = None
    for k in range(periods):
        t = t0 + k
        X = float(np.asarray(policy(np.array([S]), np.array([D]), np.array([t])))[0])
        S1, D1 = dyn.transition(S, D, X, phys, opts)
        S1, D1 = float(S1), float(D1)
        ts.append(t); Xs.append(X); Ss.append(S); Ds.append(D)
        if d_threshold is not None and D1 > d_threshold and D1 > D and X == 0.0:
            streak += 1
        else:
            streak = 0
        change = abs(S1 - S) + abs(D1 - D)
        calm = calm + 1 if change < CONVERGE_TOL * max(1.0, S + D) else 0
        S, D = S1, D1
        if extra is not None:
            extra -= 1
            if extra <= 0:
                break
            continue
        if calm >= CONVERGE_RUN:
            reason = "converged"
            if stop_early:
                break
        if d_threshold is not None and streak >= rule.persistence:
            reason = "diverged"
            if stop_early:
                if extra_after_divergence <= 0:
                    break
                extra = extra_after_divergence
    ts.append(t0 + len(Xs)); Xs.append(np.nan); Ss.append(S); Ds.append(D)
    S_arr, D_arr = np.array(Ss), np.array(Ds)
    L = dyn.collision_probability((S_arr, D_arr), phys, scenario.avoidance)
    return Trajectory(np.array(ts, float), np.array(Xs), S_arr, D_arr, L, reason, scenario)


@dataclass(frozen=True)
class TerminalRegime:
    zero_launch_tail: bool
    diverged: bool
    termination: str
    periods: int

    @property
    def agree(self) -> bool:
        return self.zero_launch_tail == self.diverged


def terminal_regime(policy, init: OrbitState, scenario: Scenario, horizon: int = 5000,
                    rule: DivergenceRule | None = None, d_threshold: float | None = None,
                    t0: float = 0) -> TerminalRegime:
    """Whether launches stop for good and whether debris runs away along one path.

    Launches count as stopped for good when every launch from some period to
    the end of the simulated path is zero and that run spans at least the
    divergence persistence window.
    """
    rule = rule or DivergenceRule()
    if d_threshold is None:
        recs = find_steady_states(scenario, None if scenario.mode == CONSTANT else t0)
        d_threshold = rule.threshold(*split_steady_states(recs), float(init.D))
    traj = simulate(policy, init, horizon, scenario, t0, rule, d_threshold)
    X = traj.X[:-1]
    tail = 0
    for x in X[::-1]:
        if x != 0.0:
            break
        tail += 1
    return TerminalRegime(bool(tail >= rule.persistence), traj.termination == "diverged",
                          traj.termination, len(X))


def run_lanes(policy, S0, D0, t_lanes, scenario: Scenario, horizon: int,
              stable_S, stable_D, d_threshold, rule: DivergenceRule | None = None,
              frozen: bool = True):
    """Classify many initial states at once.

    ``stable_S``/``stable_D`` may be nan for lanes without a stable state;
    ``t_lanes`` is each lane's economic period (held fixed when ``frozen``).
    Returns ``(classes, periods_used)``.
    """
    rule = rule or DivergenceRule()
    phys, opts = scenario.phys, scenario.options
    S = np.array(S0, float, copy=True).ravel()
    D = np.array(D0, float, copy=True).ravel()
    n = S.size
    t_l = np.broadcast_to(np.asarray(t_lanes, float), (n,)).copy()
    sS = np.broadcast_to(np.asarray(stable_S, float), (n,)).copy()
    sD = np.broadcast_to(np.asarray(stable_D, float), (n,)).copy()
    thr = np.broadcast_to(np.asarray(d_threshold, float), (n,)).copy()
    cls = np.full(n, BasinClass.UNDETERMINED, dtype=int)
    used = np.full(n, horizon, dtype=int)
    streak = np.zeros(n, dtype=int)
    live = np.arange(n)
    ball = rule.stable_ball
    has_stable = np.isfinite(sS)
    for k in range(horizon):
        if live.size == 0:
            break
        s, d = S[live], D[live]
        in_ball = has_stable[live] & (np.abs(s - sS[live]) <= ball * np.maximum(sS[live], 1e-12)) \
            & (np.abs(d - sD[live]) <= ball * np.maximum(sD[live], 1e-12))
        tt = t_l[live] if frozen else t_l[live] + k
        X = np.asarray(policy(s, d, tt), float)
        with np.errstate(over="ignore", invalid="ignore"):
            s1, d1 = dyn.transition(s, d, X, phys, opts)
        grow = (d1 > thr[live]) & (d1 > d) & (X == 0.0)
        streak[live] = np.where(grow, streak[live] + 1, 0)
        S[live], D[live] = s1, d1
        # debris that overflows has certainly run away
        div = (streak[live] >= rule.persistence) | ~np.isfinite(d1)
        cls[live[in_ball]] = BasinClass.STABLE_BASIN
        cls[live[div & ~in_ball]] = BasinClass.KESSLER
        done = in_ball | div
        used[live[done]] = k
        live = live[~done]
    return cls, used


# --------------------------------------------------------------------------
# basins


@dataclass
class BasinMap:
    S_nodes: np.ndarray
    D_nodes: np.ndarray
    classes: np.ndarray  # shape (n_s, n_d)
    horizon: int
    rule: DivergenceRule
    d_threshold: float
    stable: SteadyStateRecord | None = None

    def counts(self) -> dict:
        return {c.name: int(np.sum(self.classes == c)) for c in BasinClass}

    def rows(self):
        for i, s in enumerate(self.S_nodes):
            for j, d in enumerate(self.D_nodes):
                yield float(s), float(d), BasinClass(self.classes[i, j]).name


def classify_basin(policy, scenario: Scenario, S_nodes, D_nodes, horizon: int = 2000,
                   rule: DivergenceRule | None = None, stable: SteadyStateRecord | None = None,
                   unstable: SteadyStateRecord | None = None, t: float = 0) -> BasinMap:
    """Label every grid node by where the policy takes it.

    Without explicit steady states, open-access ones are computed for the
    scenario (constant mode) or for frozen period ``t``.
    """
    rule = rule or DivergenceRule()
    if stable is None and unstable is None:
        recs = find_steady_states(scenario, None if scenario.mode == CONSTANT else t)
        stable, unstable = split_steady_states(recs)
    S_nodes = np.asarray(S_nodes, float)
    D_nodes = np.asarray(D_nodes, float)
    SS, DD = np.meshgrid(S_nodes, D_nodes, indexing="ij")
    thr = rule.threshold(stable, unstable, float(D_nodes.max()))
    sS = stable.S_star if stable else np.nan
    sD = stable.D_star if stable else np.nan
    cls, _ = run_lanes(policy, SS, DD, t, scenario, horizon, sS, sD, thr, rule)
    return BasinMap(S_nodes, D_nodes, cls.reshape(SS.shape), horizon, rule, thr, stable)


# --------------------------------------------------------------------------
# nullclines and direction field


def direction_field(policy, scenario: Scenario, S_nodes, D_nodes, h: float = 10.0, t: float = 0):
    """``((S' - S) / h, (D' - D) / h)`` on the grid, indexed ``[i_s, j_d]``."""
    if not h > 0:
        raise ValidationError("h must be positive")
    SS, DD = np.meshgrid(np.asarray(S_nodes, float), np.asarray(D_nodes, float), indexing="ij")
    X = np.asarray(policy(SS.ravel(), DD.ravel(), np.full(SS.size, t)), float).reshape(SS.shape)
    S1, D1 = dyn.transition(SS, DD, X, scenario.phys, scenario.options)
    return (S1 - SS) / h, (D1 - DD) / h


def _to_coords(contour, S_nodes, D_nodes):
    i = np.arange(len(S_nodes))
    j = np.arange(len(D_nodes))
    return np.column_stack([np.interp(contour[:, 0], i, S_nodes), np.interp(contour[:, 1], j, D_nodes)])


def nullclines(policy, scenario: Scenario, S_nodes, D_nodes, h: float = 10.0, t: float = 0):
    """Zero contours of the satellite and debris changes (marching squares).

    Returns ``(satellite_lines, debris_lines)``, each a list of ``(k, 2)``
    arrays of ``(S, D)`` vertices.
    """
    dS, dD = direction_field(policy, scenario, S_nodes, D_nodes, h, t)
    S_nodes = np.asarray(S_nodes, float)
    D_nodes = np.asarray(D_nodes, float)
    sat = [_to_coords(c, S_nodes, D_nodes) for c in measure.find_contours(dS, 0.0)]
    deb = [_to_coords(c, S_nodes, D_nodes) for c in measure.find_contours(dD, 0.0)]
    return sat, deb


def polyline_distance(lines, point) -> float:
    """Distance from ``point`` to the nearest segment of any polyline."""
    p = np.asarray(point, float)
    best = np.inf
    for ln in lines:
        if len(ln) == 1:
            best = min(best, float(np.hypot(*(ln[0] - p))))
            continue
        a, b = ln[:-1], ln[1:]
        ab = b - a
        den = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
        u = np.clip(np.sum((p - a) * ab, axis=1) / den, 0.0, 1.0)
        proj = a + u[:, None] * ab
        best = min(best, float(np.min(np.hypot(*(proj - p).T))))
    return best


# --------------------------------------------------------------------------
# overshooting


@dataclass(frozen=True)
class OvershootResult:
    applicable: bool
    overshoot_S: bool = False
    overshoot_D: bool = False

    @property
    def any(self) -> bool:
        return self.overshoot_S or self.overshoot_D


def detect_overshoot(traj: Trajectory, steady: SteadyStateRecord, rtol: float = 1e-6) -> OvershootResult:
    """Whether the path rises above the steady state in either stock.

    A flag is set when some state after the initial one exceeds the steady
    value by more than ``rtol`` relative. Paths that do not converge are
    reported as not applicable.
    """
    if traj.termination != "converged":
        return OvershootResult(False)

    def above(x, star):
        return bool(np.any(x[1:] > star + rtol * max(abs(star), 1e-300)))

    return OvershootResult(True, above(traj.S, steady.S_star), above(traj.D, steady.D_star))


def one_step_preimage(steady: SteadyStateRecord, scenario: Scenario, launch: float) -> OrbitState:
    """State that open access carries onto ``steady`` in one period with ``launch`` launches.

    The steady state lies on the target isoquant, so any state whose
    launch-free successor sits ``launch`` units back along the launch ray
    from it is mapped there exactly. The physical step is inverted by a 2-D
    root solve.
    """
    phys, opts = scenario.phys, scenario.options
    goal = np.array([steady.S_star - launch, steady.D_star - phys.m * launch])
    if np.any(goal < 0):
        raise ValidationError("launch too large for a nonnegative pre-launch state")

    def resid(v):
        s, d = np.abs(v)
        return [float(dyn.surviving_stock(s, d, phys, opts)) - goal[0],
                float(dyn.next_debris_base(s, d, phys, opts)) - goal[1]]

    sol = root(resid, x0=[steady.S_star, steady.D_star], method="hybr", tol=1e-14)
    if not sol.success:
        raise ValidationError(f"could not invert the physical step: {sol.message}")
    s, d = np.abs(sol.x)
    return OrbitState(float(s), float(d))


def action_region_box(scenario: Scenario) -> tuple[float, float]:
    """Upper corner of a box that contains the open-access action region."""
    s0 = float(satellite_isoquant(0.0, scenario))
    phys = scenario.phys
    d_s = float(-np.log1p(-scenario.tau) / phys.alpha_sd) if not scenario.avoidance else 10 / phys.alpha_sd
    keep = 1.0 - phys.delta
    return 2.0 * s0, d_s / max(keep, 1e-3)


def sample_action_region(scenario: Scenario, n: int, seed: int = 0, stable=None,
                         horizon: int = 5000, max_draws: int = 100000):
    """Uniform rejection sample of states with positive open-access launches
    that converge to the stable steady state."""
    rng = np.random.default_rng(seed)
    rule = DivergenceRule()
    recs = find_steady_states(scenario)
    st, unstable = split_steady_states(recs)
    stable = stable or st
    thr = rule.threshold(stable, unstable)
    s_hi, d_hi = action_region_box(scenario)
    pol = OpenAccessPolicy(scenario)
    out = []
    draws = 0
    while len(out) < n and draws < max_draws:
        k = max(4 * (n - len(out)), 16)
        S = rng.uniform(0, s_hi, k)
        D = rng.uniform(0, d_hi, k)
        draws += k
        pos = launch_rates(S, D, scenario) > 0
        S, D = S[pos], D[pos]
        if S.size == 0:
            continue
        cls, _ = run_lanes(pol, S, D, 0, scenario, horizon, stable.S_star, stable.D_star, thr, rule)
        for s, d, c in zip(S, D, cls):
            if c == BasinClass.STABLE_BASIN and len(out) < n:
                out.append(OrbitState(float(s), float(d)))
    return out


# --------------------------------------------------------------------------
# Kessler time


@dataclass
class KesslerTimeResult:
    year: int | None
    start_year: int
    max_years: int
    path_S: np.ndarray = field(repr=False)
    path_D: np.ndarray = field(repr=False)
    classes: np.ndarray = field(repr=False)
    note: str = ""

    @property
    def beyond_horizon(self) -> bool:
        return self.year is None

    @property
    def label(self) -> str:
        if self.year is None:
            return f">{self.start_year + len(self.path_S) - 1}"
        return str(self.year)


def open_access_path(scenario: Scenario, init: OrbitState, years: int, t0: int = 0):
    """Open-access states for periods ``t0 .. t0 + years`` (inclusive).

    Stops early, returning a shorter path, if the target collision
    probability becomes unattainable.
    """
    pol = OpenAccessPolicy(scenario)
    S = [float(init.S)]
    D = [float(init.D)]
    for k in range(years):
        try:
            X = pol(np.array([S[-1]]), np.array([D[-1]]), np.array([t0 + k]))
        except UnboundedEquilibriumError:
            break
        s1, d1 = dyn.transition(S[-1], D[-1], X, scenario.phys, scenario.options)
        S.append(float(s1[0]))
        D.append(float(d1[0]))
    return np.array(S), np.array(D)


def _frozen_thresholds(scenario: Scenario, years, d_now, rule: DivergenceRule):
    sS = np.full(len(years), np.nan)
    sD = np.full(len(years), np.nan)
    thr = np.empty(len(years))
    for i, t in enumerate(years):
        stable, unstable = split_steady_states(find_steady_states(scenario, t=float(t)))
        if stable is not None:
            sS[i], sD[i] = stable.S_star, stable.D_star
        thr[i] = rule.threshold(stable, unstable, float(d_now[i]))
    return sS, sD, thr


def kessler_membership(scenario: Scenario, S, D, t, horizon: int = 5000,
                       rule: DivergenceRule | None = None, frozen: bool = True):
    """Kessler-region test of states ``(S[i], D[i])`` under period-``t[i]`` economics."""
    rule = rule or DivergenceRule()
    t = np.asarray(t, float)
    sS, sD, thr = _frozen_thresholds(scenario, t, np.asarray(D, float), rule)
    pol = OpenAccessPolicy(scenario)
    cls, _ = run_lanes(pol, S, D, t, scenario, horizon, sS, sD, thr, rule, frozen=frozen)
    return cls


def kessler_time(scenario: Scenario, init: OrbitState | None = None, start_year: int | None = None,
                 max_years: int = 700, horizon: int = 5000, rule: DivergenceRule | None = None,
                 frozen: bool = True, chunk: int = 64) -> KesslerTimeResult:
    """First calendar year whose state lies in that year's Kessler region.

    The open-access path is simulated under the time-varying economics;
    membership for year ``y`` is decided by forward simulation with the
    economics held at year ``y`` (or, with ``frozen=False``, evolving
    onward from ``y``). Years are tested in chunks so the path is only
    extended as far as needed.
    """
    init = init or OrbitState(158.0, 626.0)
    start_year = scenario.start_year if start_year is None else start_year
    S_all, D_all, cls_all = [], [], []
    state = init
    note = ""
    for lo in range(0, max_years, chunk):
        n = min(chunk, max_years - lo)
        S, D = open_access_path(scenario, state, n, t0=lo)
        S, D = S[:n], D[:n]
        idx = lo + np.arange(len(S))
        try:
            cls = kessler_membership(scenario, S, D, idx, horizon, rule, frozen)
        except UnboundedEquilibriumError:
            cls = _membership_one_by_one(scenario, S, D, idx, horizon, rule, frozen)
        S_all.append(S); D_all.append(D); cls_all.append(cls)
        hit = np.flatnonzero(cls == BasinClass.KESSLER)
        if hit.size:
            year = start_year + int(idx[hit[0]])
            return KesslerTimeResult(year, start_year, max_years, np.concatenate(S_all),
                                     np.concatenate(D_all), np.concatenate(cls_all))
        if len(S) < n:
            note = f"target collision probability unattainable from {start_year + lo + len(S)}"
            break
        state = OrbitState(*_advance(scenario, S[-1], D[-1], lo + n - 1))
    return KesslerTimeResult(None, start_year, max_years, np.concatenate(S_all),
                             np.concatenate(D_all), np.concatenate(cls_all), note)


def _advance(scenario, S, D, t):
    X = OpenAccessPolicy(scenario)(np.array([S]), np.array([D]), np.array([t]))
    s1, d1 = dyn.transition(S, D, X, scenario.phys, scenario.options)
    return float(s1[0]), float(d1[0])


def _membership_one_by_one(scenario, S, D, idx, horizon, rule, frozen):
    out = np.full(len(S), BasinClass.UNDETERMINED)
    for i in range(len(S)):
        try:
            out[i] = kessler_membership(scenario, S[i:i + 1], D[i:i + 1], idx[i:i + 1],
                                        horizon, rule, frozen)[0]
        except UnboundedEquilibriumError:
            break
    return out


def sweep_kessler_times(template: Scenario, axis: str, values, max_years: int = 700,
                        horizon: int = 5000, jobs: int = 1, init: OrbitState | None = None,
                        **overrides) -> list[tuple[float, int | None]]:
    """Kessler time for each value of ``beta_dd`` or the payoff growth rate ``a``."""
    name = {"beta_dd": "beta_dd", "growth_a": "a", "a": "a", "eta": "eta"}.get(axis)
    if name is None:
        raise ValidationError(f"unknown sweep axis {axis!r}")
    values = [float(v) for v in values]
    if not all(np.isfinite(values)):
        raise ValidationError("sweep values must be finite")
    base = template.with_overrides(**overrides) if overrides else template

    def one(v):
        sc = base.with_overrides(**{name: v})
        if name == "eta":
            from .scenarios import factor_productivity
            sc = sc.with_overrides(pi=factor_productivity(v))
        return v, kessler_time(sc, init, max_years=max_years, horizon=horizon).year

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(one, values))
    return [one(v) for v in values]
