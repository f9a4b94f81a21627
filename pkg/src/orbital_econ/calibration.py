"""Calibration of the shell model from the bundled economic and traffic panels.

Pipeline: load and validate the two panels, compute kinetic-gas collision
rates and breakup fragment counts, then run the cost-growth, equilibrium
adjustment and fragmentation (ridge) regressions. ``emit_calibration``
writes the result in the flat config format read by :mod:`params`.
"""
from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError
from .params import (
    TABLE4_COST_GROWTH,
    TABLE4_GAMMAS,
    TABLE4_PHYSICAL,
    PhysicalParams,
    write_config,
)
from .scenarios import COST_2019, factor_productivity

DATA_DIR = Path(__file__).resolve().parent / "data"
ECON_CSV = DATA_DIR / "econ.csv"
TRAFFIC_CSV = DATA_DIR / "traffic.csv"

ECON_COLUMNS = ("year", "revenues", "costs")
TRAFFIC_COLUMNS = ("year", "launched", "active", "debris", "collision_prob")
ECON_YEARS = (2006, 2019)
TRAFFIC_YEARS = (2006, 2020)

SECONDS_PER_YEAR = 365.25 * 86400.0
EARTH_RADIUS_M = 6.371e6
GM_EARTH = 3.986004418e14
PENALTY_GRID = np.logspace(-4, 4, 81)

# Default masses (kg) behind the unregularised fragment counts: a satellite
# of Iridium dry mass and an average tracked fragment.
SATELLITE_MASS = 556.0
FRAGMENT_MASS = 1.44


# --------------------------------------------------------------------------
# panels


@dataclass(frozen=True)
class EconPanel:
    year: np.ndarray
    revenues: np.ndarray
    costs: np.ndarray


@dataclass(frozen=True)
class TrafficPanel:
    year: np.ndarray
    launched: np.ndarray
    active: np.ndarray
    debris: np.ndarray
    collision_prob: np.ndarray

    def at(self, years) -> "TrafficPanel":
        idx = np.searchsorted(self.year, np.asarray(years))
        return TrafficPanel(*(getattr(self, k)[idx] for k in TRAFFIC_COLUMNS))


def _read_columns(path: Path, columns) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(columns):
            raise ValidationError(f"{path}: expected columns {','.join(columns)}, got {reader.fieldnames}")
        rows = list(reader)
    try:
        return {c: np.array([float(r[c]) for r in rows]) for c in columns}
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from exc


def _check_years(year: np.ndarray, span: tuple[int, int], name: str):
    expected = np.arange(span[0], span[1] + 1)
    if len(year) != len(expected):
        raise ValidationError(f"{name}: expected {len(expected)} rows for {span[0]}-{span[1]}, got {len(year)}")
    if not np.array_equal(year, expected):
        raise ValidationError(f"{name}: years must run contiguously from {span[0]} to {span[1]}")


def load_econ(path=ECON_CSV) -> EconPanel:
    cols = _read_columns(path, ECON_COLUMNS)
    _check_years(cols["year"], ECON_YEARS, "economic panel")
    if np.any(cols["revenues"] <= 0) or np.any(cols["costs"] <= 0):
        raise ValidationError("economic panel: revenues and costs must be positive")
    return EconPanel(cols["year"].astype(int), cols["revenues"], cols["costs"])


def load_traffic(path=TRAFFIC_CSV) -> TrafficPanel:
    cols = _read_columns(path, TRAFFIC_COLUMNS)
    _check_years(cols["year"], TRAFFIC_YEARS, "traffic panel")
    for k in ("launched", "active", "debris"):
        v = cols[k]
        if np.any(v < 0) or np.any(v != np.round(v)):
            raise ValidationError(f"traffic panel: {k} must be nonnegative integers")
    if np.any(cols["collision_prob"] <= 0):
        raise ValidationError("traffic panel: collision probabilities must be positive")
    return TrafficPanel(cols["year"].astype(int), *(cols[k] for k in TRAFFIC_COLUMNS[1:]))


def load_panels(econ_csv=ECON_CSV, traffic_csv=TRAFFIC_CSV) -> tuple[EconPanel, TrafficPanel]:
    return load_econ(econ_csv), load_traffic(traffic_csv)


# --------------------------------------------------------------------------
# physics


@dataclass(frozen=True)
class ObjectGeometry:
    """Mass (kg), collision cross-section (m^2), speed (m/s) and shell volume (m^3)."""

    M: float
    a: float
    s: float
    V: float

    def __post_init__(self):
        if self.V <= 0:
            raise DomainError("shell volume must be positive")
        if not (self.M > 0 and self.a > 0 and self.s > 0):
            raise DomainError("mass, area and speed must be positive")


def orbital_speed(altitude_km: float) -> float:
    """Circular orbital speed (m/s) at the given altitude."""
    return math.sqrt(GM_EARTH / (EARTH_RADIUS_M + altitude_km * 1e3))


def shell_volume(lower_km: float, upper_km: float) -> float:
    """Volume (m^3) of the spherical shell between two altitudes."""
    if upper_km <= lower_km:
        raise DomainError("upper altitude must exceed the lower one")
    r0 = EARTH_RADIUS_M + lower_km * 1e3
    r1 = EARTH_RADIUS_M + upper_km * 1e3
    return 4.0 / 3.0 * math.pi * (r1**3 - r0**3)


def collision_cross_section(radius_1: float, radius_2: float) -> float:
    """Area within which two spheres of the given radii (m) touch."""
    return math.pi * (radius_1 + radius_2) ** 2


def kinetic_gas_alpha(geom: ObjectGeometry, period_seconds: float = SECONDS_PER_YEAR) -> float:
    """Encounter rate ``s a / V`` of a randomly moving object, per period."""
    return geom.s * geom.a / geom.V * period_seconds


def breakup_fragments(M: float) -> float:
    """Fragments of at least 10 cm from a catastrophic breakup of mass ``M`` kg."""
    if not M > 0:
        raise DomainError("mass must be positive")
    return 0.1 * M**0.75 * 0.1**-1.71


def analytic_betas(satellite_mass: float = SATELLITE_MASS, fragment_mass: float = FRAGMENT_MASS):
    """Unregularised fragment counts (SS, SD, DD) from the breakup formula.

    Both bodies break up in a satellite-satellite or debris-debris
    collision; a satellite-debris collision shatters the satellite.
    """
    n_sat = breakup_fragments(satellite_mass)
    n_frag = breakup_fragments(fragment_mass)
    return 2.0 * n_sat, n_sat + n_frag, 2.0 * n_frag


# --------------------------------------------------------------------------
# regressions


@dataclass(frozen=True)
class OlsResult:
    coef: np.ndarray
    std_error: np.ndarray
    residuals: np.ndarray
    rank: int


def ols(X, y) -> OlsResult:
    """Least squares with classical standard errors (design includes any intercept)."""
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(y) - X.shape[1]
    if rank < X.shape[1] or dof <= 0:
        se = np.full(X.shape[1], np.nan)
    else:
        s2 = resid @ resid / dof
        se = np.sqrt(s2 * np.diag(np.linalg.inv(X.T @ X)))
    return OlsResult(coef, se, resid, int(rank))


@dataclass(frozen=True)
class CostGrowth:
    eta0_F: float
    eta1_F: float
    std_error: float
    growth_rate: float


def cost_growth_regression(panel: EconPanel) -> CostGrowth:
    """Log-linear trend in total costs."""
    t = panel.year - panel.year[0]
    res = ols(np.column_stack([np.ones_like(t, dtype=float), t]), np.log(panel.costs))
    return CostGrowth(float(res.coef[0]), float(res.coef[1]), float(res.std_error[1]),
                      float(math.expm1(res.coef[1])))


@dataclass(frozen=True)
class Adjustment:
    gamma0: float
    gamma1: float
    gamma2: float
    std_errors: tuple[float, float, float]
    years: tuple[int, int]


def adjustment_regression(econ: EconPanel, traffic: TrafficPanel) -> Adjustment:
    """Collision probability on the return ratio and the lagged cost ratio.

    The lag drops the first year, leaving the overlapping years after it.
    """
    years = econ.year[1:]
    L = traffic.at(years).collision_prob
    ratio = econ.revenues[1:] / econ.costs[1:]
    lag = econ.costs[:-1] / econ.costs[1:]
    res = ols(np.column_stack([np.ones_like(ratio), ratio, lag]), L)
    g0, g1, g2 = (float(c) for c in res.coef)
    return Adjustment(g0, g1, g2, tuple(float(s) for s in res.std_error),
                      (int(years[0]), int(years[-1])))


def ridge(Z, y, penalty: float):
    """Ridge fit with an unpenalised intercept; returns ``(slopes, intercept)``."""
    Z = np.asarray(Z, float)
    y = np.asarray(y, float)
    zm = Z.mean(axis=0)
    ym = y.mean()
    Zc = Z - zm
    A = Zc.T @ Zc + penalty * np.eye(Z.shape[1])
    if penalty == 0:
        if np.linalg.matrix_rank(Zc) < Z.shape[1]:
            raise ValidationError("regressors are collinear; a positive penalty is required")
    slopes = np.linalg.solve(A, Zc.T @ (y - ym))
    return slopes, float(ym - zm @ slopes)


def loo_error(Z, y, penalty: float) -> float:
    """Mean squared leave-one-out prediction error of :func:`ridge`."""
    Z = np.asarray(Z, float)
    y = np.asarray(y, float)
    n = len(y)
    err = 0.0
    for i in range(n):
        keep = np.arange(n) != i
        slopes, icpt = ridge(Z[keep], y[keep], penalty)
        err += (y[i] - icpt - Z[i] @ slopes) ** 2
    return err / n


def select_penalty(Z, y, grid=PENALTY_GRID) -> float:
    """Smallest-error penalty on the grid (ties go to the smaller penalty)."""
    errs = [loo_error(Z, y, lam) for lam in grid]
    return float(grid[int(np.argmin(errs))])


@dataclass(frozen=True)
class Fragmentation:
    beta_ss_tilde: float
    beta_sd_tilde: float
    beta_dd_tilde: float
    m: float
    penalty: float
    rho: tuple[float, float, float]


def fragmentation_design(traffic: TrafficPanel, betas, alphas, delta: float):
    """Regressors and dependent variable of the debris-law regression."""
    b_ss, b_sd, b_dd = betas
    a_ss, a_sd, a_dd = alphas
    S = traffic.active[:-1]
    D = traffic.debris[:-1]
    Z = np.column_stack([
        b_ss * -np.expm1(-a_ss * S),
        b_sd * -np.expm1(-a_sd * S),
        b_dd * -np.expm1(-a_dd * D),
    ])
    y = traffic.debris[1:] - (1.0 - delta) * D
    return Z, y


def ridge_fragmentation(traffic: TrafficPanel, betas=None, alphas=None, delta: float | None = None,
                        penalty: float | None = None, grid=PENALTY_GRID) -> Fragmentation:
    """Shrink the analytic fragment counts toward zero by ridge regression.

    ``penalty=None`` selects it by leave-one-out cross-validation over
    ``grid``. The intercept is the launch-debris term and is not penalised.
    """
    betas = analytic_betas() if betas is None else tuple(betas)
    phys = TABLE4_PHYSICAL
    alphas = (phys.alpha_ss, phys.alpha_sd, phys.alpha_dd) if alphas is None else tuple(alphas)
    delta = phys.delta if delta is None else delta
    Z, y = fragmentation_design(traffic, betas, alphas, delta)
    lam = select_penalty(Z, y, grid) if penalty is None else float(penalty)
    rho, m = ridge(Z, y, lam)
    bt = [float(r * b) for r, b in zip(rho, betas)]
    return Fragmentation(bt[0], bt[1], bt[2], m, lam, tuple(float(r) for r in rho))


# --------------------------------------------------------------------------
# output


@dataclass
class CalibratedParams:
    phys: PhysicalParams
    econ: dict
    diagnostics: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_flat(self) -> dict:
        from dataclasses import asdict

        flat = asdict(self.phys)
        flat.update(self.econ)
        return flat


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def calibrate(econ_csv=ECON_CSV, traffic_csv=TRAFFIC_CSV, eta: float = 0.0, a: float = 0.03,
              r: float = 0.05, use_estimates: bool = False, overrides: dict | None = None,
              penalty: float | None = None) -> CalibratedParams:
    """Run the regressions and assemble a calibrated parameter set.

    Physical fields default to the published rounded values; with
    ``use_estimates`` the cost growth, adjustment coefficients and ridge
    estimates replace them. ``overrides`` wins over both and is recorded.
    """
    econ_panel, traffic = load_panels(econ_csv, traffic_csv)
    growth = cost_growth_regression(econ_panel)
    adj = adjustment_regression(econ_panel, traffic)
    frag = ridge_fragmentation(traffic, penalty=penalty)

    phys = TABLE4_PHYSICAL
    gammas = TABLE4_GAMMAS
    b = TABLE4_COST_GROWTH
    if use_estimates:
        phys = replace(phys, beta_ss=frag.beta_ss_tilde, beta_sd=frag.beta_sd_tilde,
                       beta_dd=frag.beta_dd_tilde, m=frag.m)
        gammas = (adj.gamma0, adj.gamma1, adj.gamma2)
        b = growth.eta1_F
    econ = dict(pi=factor_productivity(eta), F=COST_2019, r=r, a=a, b=b, eta=eta,
                gamma0=gammas[0], gamma1=gammas[1], gamma2=gammas[2])
    overrides = dict(overrides or {})
    phys_keys = set(phys.__dataclass_fields__)
    phys = replace(phys, **{k: v for k, v in overrides.items() if k in phys_keys})
    for k, v in overrides.items():
        if k in phys_keys:
            continue
        if k not in econ:
            raise ValidationError(f"unknown calibration field {k!r}")
        econ[k] = v

    diagnostics = dict(
        eta1_F=growth.eta1_F, eta1_F_se=growth.std_error, cost_growth_rate=growth.growth_rate,
        gamma0_hat=adj.gamma0, gamma1_hat=adj.gamma1, gamma2_hat=adj.gamma2,
        beta_ss_tilde_hat=frag.beta_ss_tilde, beta_sd_tilde_hat=frag.beta_sd_tilde,
        beta_dd_tilde_hat=frag.beta_dd_tilde, m_hat=frag.m, ridge_penalty=frag.penalty,
    )
    provenance = dict(
        econ_sha256=_sha256(econ_csv), traffic_sha256=_sha256(traffic_csv),
        source="estimates" if use_estimates else "published defaults",
        overrides=",".join(f"{k}={v!r}" for k, v in sorted(overrides.items())) or "none",
        ridge_penalty=repr(frag.penalty),
    )
    return CalibratedParams(phys, econ, diagnostics, provenance)


def emit_calibration(path, result: CalibratedParams, stamp: bool = True) -> None:
    """Write the calibrated scenario config with a provenance block."""
    from .params import TIME_VARYING

    flat = result.to_flat()
    missing = [k for k in ("pi", "F", "r") if flat.get(k) is None]
    if missing:
        raise ValidationError(f"calibration lacks required fields: {', '.join(missing)}")
    flat.update(mode=TIME_VARYING, start_year=2020, avoidance=True, turnover=True,
                fragment_avoidance=True)
    prov = dict(result.provenance)
    prov.update({f"diag_{k}": repr(v) for k, v in result.diagnostics.items()})
    if stamp:
        prov["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    write_config(path, flat, prov)
