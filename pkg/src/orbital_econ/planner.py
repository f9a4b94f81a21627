"""Fleet planner: dynamic programming on a bilinear grid and the external cost.

The planner picks launches to maximise discounted fleet payoffs
``sum beta^t (pi S_t - F X_t)`` subject to the same laws of motion as open
access. The value function is seeded by finite-horizon backward induction
on a sparse sub-grid and then refined by value-function iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import dynamics as dyn
from .errors import ConvergenceError, ValidationError
from .open_access import find_steady_states, launch_rates, satellite_isoquant
from .params import OrbitState, Scenario

log = logging.getLogger(__name__)

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0
INNER_XTOL = 1e-8


# --------------------------------------------------------------------------
# grid and fields


@dataclass(frozen=True)
class Grid2D:
    s_max: float
    d_max: float
    n_s: int = 64
    n_d: int = 64

    def __post_init__(self):
        if self.n_s < 2 or self.n_d < 2:
            raise ValidationError("grids need at least two nodes per axis")
        if not (self.s_max > 0 and self.d_max > 0):
            raise ValidationError("grid extents must be positive")

    @property
    def S_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.s_max, self.n_s)

    @property
    def D_nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.d_max, self.n_d)

    def mesh(self):
        return np.meshgrid(self.S_nodes, self.D_nodes, indexing="ij")

    def coarsen(self, n_s: int, n_d: int) -> "Grid2D":
        return Grid2D(self.s_max, self.d_max, min(n_s, self.n_s), min(n_d, self.n_d))

    @classmethod
    def parse(cls, spec: str) -> "Grid2D":
        """``"s_max,d_max,n_s,n_d"``."""
        try:
            s_max, d_max, n_s, n_d = spec.split(",")
            return cls(float(s_max), float(d_max), int(n_s), int(n_d))
        except ValueError as exc:
            raise ValidationError(f"grid spec must be 's_max,d_max,n_s,n_d', got {spec!r}") from exc


class ClampCounter:
    """Counts interpolation queries that fell outside the grid."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        if n:
            if self.count == 0:
                log.warning("interpolation query outside the grid; clamping to the boundary")
            self.count += int(n)


def bilinear(grid: Grid2D, values: np.ndarray, S, D, counter: ClampCounter | None = None):
    """Bilinear interpolation of node values, clamping outside queries."""
    S = np.asarray(S, float)
    D = np.asarray(D, float)
    ds = grid.s_max / (grid.n_s - 1)
    dd = grid.d_max / (grid.n_d - 1)
    if counter is not None:
        counter.add(np.count_nonzero((S > grid.s_max * (1 + 1e-12)) | (D > grid.d_max * (1 + 1e-12))))
    x = np.clip(S / ds, 0.0, grid.n_s - 1)
    y = np.clip(D / dd, 0.0, grid.n_d - 1)
    i = np.minimum(x.astype(int), grid.n_s - 2)
    j = np.minimum(y.astype(int), grid.n_d - 2)
    fx = x - i
    fy = y - j
    v00 = values[i, j]
    v10 = values[i + 1, j]
    v01 = values[i, j + 1]
    v11 = values[i + 1, j + 1]
    return (1 - fx) * ((1 - fy) * v00 + fy * v01) + fx * ((1 - fy) * v10 + fy * v11)


@dataclass
class ValueField:
    grid: Grid2D
    values: np.ndarray
    counter: ClampCounter = field(default_factory=ClampCounter, repr=False)

    def __call__(self, S, D):
        return bilinear(self.grid, self.values, S, D, self.counter)

    def smooth(self) -> RectBivariateSpline:
        """Cubic spline through the node values, for derivatives."""
        return RectBivariateSpline(self.grid.S_nodes, self.grid.D_nodes, self.values, kx=3, ky=3, s=0)


@dataclass
class PolicyField:
    grid: Grid2D
    values: np.ndarray
    x_upper: float | None = None
    counter: ClampCounter = field(default_factory=ClampCounter, repr=False)
    kind = "planner"

    def __call__(self, S, D, t=None):
        X = np.maximum(bilinear(self.grid, self.values, S, D, self.counter), 0.0)
        return X if self.x_upper is None else np.minimum(X, self.x_upper)


# --------------------------------------------------------------------------
# Bellman operator


def default_grid(scenario: Scenario, n_s: int = 64, n_d: int = 64) -> Grid2D:
    """``[0, 3 S_hat(0)] x [0, 3 D*]`` with ``D*`` the highest open-access steady debris level."""
    s0 = float(satellite_isoquant(0.0, scenario))
    recs = find_steady_states(scenario)
    d_star = max((r.D_star for r in recs), default=s0)
    return Grid2D(3.0 * max(s0, 1e-12), 3.0 * max(d_star, 1e-12), n_s, n_d)


def launch_cap(scenario: Scenario) -> float:
    """Upper end of the inner search: twice the open-access launch at the empty orbit."""
    x0 = float(launch_rates(0.0, 0.0, scenario))
    cap = 2.0 * x0 if x0 > 0 else 1.0
    if scenario.econ.x_upper is not None:
        cap = min(cap, scenario.econ.x_upper)
    return cap


def _golden_max(obj, lo, hi, xtol=INNER_XTOL):
    """Vectorised golden-section search with a final parabolic step and endpoint check."""
    a = np.array(lo, float, copy=True)
    b = np.array(hi, float, copy=True)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    scale = float(np.max(hi - lo)) if np.size(hi) else 1.0
    n_iter = int(np.ceil(np.log(max(xtol, 1e-300) / max(scale, 1e-300)) / np.log(GOLDEN))) + 1
    for _ in range(max(n_iter, 1)):
        left = fc >= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + GOLDEN * (b - a))
        c_new = np.where(left, b - GOLDEN * (b - a), d)
        f_new = obj(np.where(left, c_new, d_new))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_new, d_new
    # parabola through (a, c, b) refines the interior estimate
    x = np.where(fc >= fd, c, d)
    fx = np.maximum(fc, fd)
    fa, fb = obj(a), obj(b)
    num = (x - a) ** 2 * (fx - fb) - (x - b) ** 2 * (fx - fa)
    den = (x - a) * (fx - fb) - (x - b) * (fx - fa)
    with np.errstate(divide="ignore", invalid="ignore"):
        xp = x - 0.5 * num / den
    xp = np.where(np.isfinite(xp) & (xp > a) & (xp < b), xp, x)
    fp = obj(xp)
    best_x = np.where(fp > fx, xp, x)
    best_f = np.maximum(fp, fx)
    for edge in (lo, hi):
        fe = obj(edge)
        take = fe >= best_f
        best_x = np.where(take, edge, best_x)
        best_f = np.where(take, fe, best_f)
    return best_x, best_f


def bellman(W: ValueField, scenario: Scenario, S, D, x_cap: float):
    """One application of the Bellman operator at states ``(S, D)``."""
    e, phys, opts = scenario.econ, scenario.phys, scenario.options
    beta = 1.0 / (1.0 + e.r)
    S_surv = dyn.surviving_stock(S, D, phys, opts)
    D_base = dyn.next_debris_base(S, D, phys, opts)
    flow = e.pi * S

    def obj(X):
        return flow - e.F * X + beta * W(S_surv + X, D_base + phys.m * X)

    lo = np.zeros_like(S)
    hi = np.full_like(S, x_cap)
    X, val = _golden_max(obj, lo, hi)
    return val, X


def finite_horizon_seed(grid: Grid2D, T: int, scenario: Scenario, sparse: tuple[int, int] = (16, 16),
                        x_cap: float | None = None) -> ValueField:
    """Backward induction from ``V_T = pi S`` on a sparse sub-grid, infilled bilinearly."""
    if T < 1:
        raise ValidationError("horizon T must be at least 1")
    x_cap = launch_cap(scenario) if x_cap is None else x_cap
    sub = grid.coarsen(*sparse)
    SS, DD = sub.mesh()
    V = ValueField(sub, scenario.econ.pi * SS)
    for _ in range(T):
        vals, _ = bellman(V, scenario, SS, DD, x_cap)
        V = ValueField(sub, vals, V.counter)
    if sub == grid:
        return V
    FS, FD = grid.mesh()
    return ValueField(grid, bilinear(sub, V.values, FS, FD), V.counter)


@dataclass
class VfiResult:
    W: ValueField
    X: PolicyField
    iterations: int
    sup_norms: list
    tolerance: float
    clamp_count: int

    def report(self) -> dict:
        return dict(iterations=self.iterations, final_sup_norm=self.sup_norms[-1] if self.sup_norms else 0.0,
                    tolerance=self.tolerance, clamp_warnings=self.clamp_count,
                    contraction_modulus=contraction_modulus(self.sup_norms))


def contraction_modulus(sup_norms, burn_in: int = 10) -> float:
    """Largest ratio of successive sup-norm changes after ``burn_in``."""
    s = np.asarray(sup_norms, float)[burn_in:]
    s = s[s > 0]
    if s.size < 2:
        return 0.0
    return float(np.max(s[1:] / s[:-1]))


def value_iteration(seed: ValueField, scenario: Scenario, tol_fraction: float = 0.01,
                    max_iter: int = 2000, x_cap: float | None = None) -> VfiResult:
    """Iterate the Bellman operator until the sup-norm change is below
    ``tol_fraction`` times the mean seed value."""
    grid = seed.grid
    x_cap = launch_cap(scenario) if x_cap is None else x_cap
    SS, DD = grid.mesh()
    tol = tol_fraction * abs(float(np.mean(seed.values)))
    W = ValueField(grid, seed.values.copy())
    norms = []
    X = np.zeros_like(SS)
    for it in range(1, max_iter + 1):
        new, X = bellman(W, scenario, SS, DD, x_cap)
        diff = float(np.max(np.abs(new - W.values)))
        norms.append(diff)
        log.debug("vfi iteration %d sup-norm %.3e", it, diff)
        W = ValueField(grid, new, W.counter)
        if diff < tol:
            break
    else:
        raise ConvergenceError(
            f"value iteration did not converge in {max_iter} iterations",
            {"sup_norms": norms[-5:], "tolerance": tol},
        )
    # policy consistent with the returned value function
    _, X = bellman(W, scenario, SS, DD, x_cap)
    return VfiResult(W, PolicyField(grid, X, scenario.econ.x_upper), it, norms, tol, W.counter.count)


def solve_planner(scenario: Scenario, grid: Grid2D | None = None, T: int = 150,
                  tol_fraction: float = 0.01, max_iter: int = 2000) -> VfiResult:
    grid = grid or default_grid(scenario)
    seed = finite_horizon_seed(grid, T, scenario)
    return value_iteration(seed, scenario, tol_fraction, max_iter)


def planner_steady_state(policy: PolicyField, scenario: Scenario, init: OrbitState | None = None,
                         periods: int = 20000) -> OrbitState:
    """Rest point of the planner's policy reached from ``init`` (default: the empty orbit)."""
    from .phase import simulate

    traj = simulate(policy, init or OrbitState(0.0, 0.0), periods, scenario)
    if traj.termination != "converged":
        raise ConvergenceError("planner path did not settle", {"final": (traj.S[-1], traj.D[-1])})
    return traj.final


# --------------------------------------------------------------------------
# optimality diagnostics


def marginal_launch_value(W: ValueField, scenario: Scenario, S_next, D_next, spline=None):
    """``beta (W_S + m W_D)`` at next period's state, from a smooth fit of ``W``."""
    sp = spline or W.smooth()
    beta = 1.0 / (1.0 + scenario.econ.r)
    W_S = sp.ev(S_next, D_next, dx=1)
    W_D = sp.ev(S_next, D_next, dy=1)
    return beta * (W_S + scenario.phys.m * W_D)


def implied_external_factor(S_next, D_next, marginal, scenario: Scenario):
    """``xi`` such that ``pi / (1 + r - q + xi)`` equals the marginal launch value."""
    e = scenario.econ
    q = 1.0 - dyn.collision_probability((S_next, D_next), scenario.phys, scenario.avoidance)
    return e.pi / marginal - (1.0 + e.r) + q


def optimality_residual(state: OrbitState, X: float, scenario: Scenario, W: ValueField, spline=None):
    """``F - pi / (1 + r - q + xi_hat)`` at an interior launch; returns ``(residual, xi_hat)``."""
    e, phys = scenario.econ, scenario.phys
    S1, D1 = dyn.transition(state.S, state.D, X, phys, scenario.options)
    M = marginal_launch_value(W, scenario, S1, D1, spline)
    q = 1.0 - dyn.collision_probability((S1, D1), phys, scenario.avoidance)
    xi = implied_external_factor(S1, D1, M, scenario)
    return float(e.F - e.pi / (1.0 + e.r - q + xi)), float(xi)


# --------------------------------------------------------------------------
# external cost


@dataclass
class MecBreakdown:
    xi_total: float
    congestion_term: float
    pollution_hazard_term: float
    pollution_persistence_term: float
    corner_adjustment_term: float = 0.0
    intermediates: dict = field(default_factory=dict)
    lambda_S: float | None = None
    lambda_D: float | None = None
    units: str = "rate"
    label: str = "steady-state"

    def terms_sum(self) -> float:
        return (self.congestion_term + self.pollution_hazard_term
                + self.pollution_persistence_term + self.corner_adjustment_term)

    def as_dict(self) -> dict:
        return dict(xi_total=self.xi_total, congestion_term=self.congestion_term,
                    pollution_hazard_term=self.pollution_hazard_term,
                    pollution_persistence_term=self.pollution_persistence_term,
                    corner_adjustment_term=self.corner_adjustment_term,
                    intermediates=self.intermediates, lambda_S=self.lambda_S,
                    lambda_D=self.lambda_D, units=self.units, label=self.label)


def _local(S, D, scenario: Scenario):
    phys = scenario.phys
    L = float(dyn.collision_probability((S, D), phys, scenario.avoidance))
    L_S, L_D = (float(v) for v in dyn.collision_partials((S, D), phys, scenario.avoidance))
    G_S, G_D = (float(v) for v in dyn.fragment_partials((S, D), phys, scenario.fragment_avoidance))
    return L, L_S, L_D, G_S, G_D


def steady_launch(state: OrbitState, scenario: Scenario) -> float:
    """Launches that hold the satellite stock fixed."""
    return state.S - float(dyn.surviving_stock(state.S, state.D, scenario.phys, scenario.options))


def steady_state_gap(state: OrbitState, scenario: Scenario) -> float:
    """Relative debris-equation residual when launches hold ``S`` fixed."""
    X = steady_launch(state, scenario)
    _, D1 = dyn.transition(state.S, state.D, max(X, 0.0), scenario.phys, scenario.options)
    return abs(float(D1) - state.D) / max(state.D, 1e-12) if X >= 0 else np.inf


def external_cost_steady_state(state: OrbitState, scenario: Scenario, tol: float = 1e-6) -> MecBreakdown:
    """Steady-state external cost in rate units (multiply by ``F`` for currency).

    Off a steady state the same expression is returned but labelled as a
    diagnostic only.
    """
    e, phys = scenario.econ, scenario.phys
    beta = 1.0 / (1.0 + e.r)
    S, D = state.S, state.D
    L, L_S, L_D, G_S, G_D = _local(S, D, scenario)
    m = phys.m
    congestion = L_S * S
    hazard = beta * (G_S + m * (L + S * L_S)) * L_D * S + (1.0 - beta) * m * L_D * S
    persistence = beta * (1.0 - phys.delta + G_D) * (e.excess_return - (L + L_S * S))
    label = "steady-state" if steady_state_gap(state, scenario) < tol else "off-steady-state-diagnostic"
    return MecBreakdown(
        xi_total=congestion + hazard + persistence,
        congestion_term=congestion,
        pollution_hazard_term=hazard,
        pollution_persistence_term=persistence,
        intermediates=dict(L=L, L_S=L_S, L_D=L_D, G_S=G_S, G_D=G_D),
        label=label,
    )


@dataclass(frozen=True)
class Multipliers:
    """Inequality multipliers around period ``t`` (all zero on interior paths).

    ``gamma_X`` and ``gamma_Xbar`` bind the launch bounds, ``gamma_S`` and
    ``gamma_D`` the nonnegativity of next period's stocks.
    """

    gamma_X_prev: float = 0.0
    gamma_Xbar_prev: float = 0.0
    gamma_S_prev: float = 0.0
    gamma_D_prev: float = 0.0
    gamma_X: float = 0.0
    gamma_Xbar: float = 0.0
    gamma_S: float = 0.0
    gamma_D: float = 0.0
    gamma_X_next: float = 0.0
    gamma_Xbar_next: float = 0.0


def external_cost_general(states, launches, scenario: Scenario, multipliers: Multipliers | None = None,
                          rtol: float = 1e-8) -> MecBreakdown:
    """External cost of a marginal satellite at ``states[2]`` from a three-period window.

    ``states`` are consecutive states ``(t-1, t, t+1)`` and ``launches`` the
    launch rates at ``t-1`` and ``t``. Terms are computed in currency and
    reported in rate units (divided by ``F``); shadow values stay in currency.
    """
    if len(states) != 3 or len(launches) != 2:
        raise ValidationError("need three states and two launch rates")
    e, phys, opts = scenario.econ, scenario.phys, scenario.options
    for k in range(2):
        S1, D1 = dyn.transition(states[k].S, states[k].D, launches[k], phys, opts)
        nxt = states[k + 1]
        if abs(S1 - nxt.S) > rtol * max(1.0, nxt.S) or abs(D1 - nxt.D) > rtol * max(1.0, nxt.D):
            raise ValidationError(f"states {k} and {k + 1} are inconsistent with the laws of motion")
    g = multipliers or Multipliers()
    F, r, m, pi = e.F, e.r, phys.m, e.pi
    beta = 1.0 / (1.0 + r)
    cur, nxt = states[1], states[2]

    def pieces(st):
        L, L_S, L_D, G_S, G_D = _local(st.S, st.D, scenario)
        keep = 1.0 - L - st.S * L_S
        return dict(
            L=L, L_S=L_S, L_D=L_D, G_S=G_S, G_D=G_D, keep=keep,
            alpha1=pi + keep * F,
            alpha2=st.S * L_D * F,
            Gamma1=G_S - m * keep,
            Gamma2=1.0 - phys.delta + G_D + m * st.S * L_D,
        )

    c, n = pieces(cur), pieces(nxt)
    kappa1 = (1 + r) * g.gamma_S_prev - (g.gamma_X - g.gamma_Xbar) * c["keep"]
    kappa2 = (1 + r) * g.gamma_D_prev + cur.S * c["L_D"] * (g.gamma_X - g.gamma_Xbar)
    kappa1n = (1 + r) * g.gamma_S - (g.gamma_X_next - g.gamma_Xbar_next) * n["keep"]
    kappa2n = (1 + r) * g.gamma_D + nxt.S * n["L_D"] * (g.gamma_X_next - g.gamma_Xbar_next)
    ratio = (c["Gamma1"] + m * c["Gamma2"]) / (n["Gamma1"] + m * n["Gamma2"])

    congestion = c["L_S"] * cur.S * F + (c["L"] - n["L"]) * F
    persistence = ratio * n["Gamma2"] * (beta * n["alpha1"] - F)
    hazard = beta * ratio * n["Gamma1"] * n["alpha2"] + m * c["alpha2"]
    corner = (
        ratio * (n["Gamma2"] * (beta * kappa1n + g.gamma_X - g.gamma_Xbar) - beta * n["Gamma1"] * kappa2n)
        - (m * kappa2 + kappa1)
        + (1 + r) * (g.gamma_Xbar_prev - g.gamma_X_prev)
    )
    lam_D = (
        beta * (n["Gamma1"] * (n["alpha2"] - kappa2n) + n["Gamma2"] * (n["alpha1"] + kappa1n))
        + n["Gamma2"] * (g.gamma_X - g.gamma_Xbar - F)
    ) / (beta * (n["Gamma1"] + m * n["Gamma2"]))
    lam_S = (1 + r) * (F - g.gamma_X + g.gamma_Xbar) + m * lam_D
    inter = {
        "alpha1": c["alpha1"], "alpha2": c["alpha2"], "Gamma1": c["Gamma1"], "Gamma2": c["Gamma2"],
        "kappa1": kappa1, "kappa2": kappa2,
        "alpha1_next": n["alpha1"], "alpha2_next": n["alpha2"], "Gamma1_next": n["Gamma1"],
        "Gamma2_next": n["Gamma2"], "kappa1_next": kappa1n, "kappa2_next": kappa2n,
    }
    interior = not any(vars(g).values())
    return MecBreakdown(
        xi_total=(congestion + persistence + hazard + corner) / F,
        congestion_term=congestion / F,
        pollution_hazard_term=hazard / F,
        pollution_persistence_term=persistence / F,
        corner_adjustment_term=corner / F,
        intermediates=inter,
        lambda_S=lam_S,
        lambda_D=lam_D,
        label="interior-path" if interior else "with-corners",
    )


def steady_window(state: OrbitState, scenario: Scenario):
    """Three-period window sitting at a steady state."""
    X = steady_launch(state, scenario)
    return [state, state, state], [X, X]
