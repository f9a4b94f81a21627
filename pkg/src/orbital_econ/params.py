"""State, parameter containers and the flat key-value config format.

Config files are INI-style text read with :mod:`configparser`. All model
fields live flat in a ``[params]`` section under their field names; an
optional ``[provenance]`` section carries free-form metadata.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import DomainError, ValidationError


@dataclass(frozen=True)
class OrbitState:
    """Active satellites ``S`` and debris fragments ``D`` in the shell."""

    S: float
    D: float

    def __post_init__(self):
        for name in ("S", "D"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise DomainError(f"{name} must be finite, got {v}")
            if v < 0:
                raise DomainError(f"{name} must be nonnegative, got {v}")

    def as_tuple(self) -> tuple[float, float]:
        return (self.S, self.D)


@dataclass(frozen=True)
class PhysicalParams:
    alpha_ss: float
    alpha_sd: float
    alpha_dd: float
    beta_ss: float
    beta_sd: float
    beta_dd: float
    delta: float
    m: float
    mu: float = 0.0
    kappa_ss: float = 0.0
    kappa_sd: float = 0.0

    def __post_init__(self):
        for name in ("alpha_ss", "alpha_sd", "alpha_dd"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        # Zero betas are allowed so that fragment channels can be switched off.
        for name in ("beta_ss", "beta_sd", "beta_dd", "m"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be nonnegative")
        if not 0.0 <= self.delta <= 1.0:
            raise ValidationError("delta must lie in [0, 1]")
        if not 0.0 <= self.mu < 1.0:
            raise ValidationError("mu must lie in [0, 1)")
        for name in ("kappa_ss", "kappa_sd"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class EconParams:
    """Economic parameters.

    In time-varying runs ``pi`` is the factor-productivity level and ``F`` the
    cost level at ``t = 0``; payoffs grow at ``a`` and costs at ``b``.
    """

    pi: float
    F: float
    r: float
    a: float = 0.0
    b: float = 0.0
    eta: float = 0.0
    gamma0: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    x_upper: float | None = None

    def __post_init__(self):
        if not (self.pi > 0 and self.F > 0 and self.r > 0):
            raise ValidationError("pi, F and r must be positive")
        if self.x_upper is not None and not self.x_upper > 0:
            raise ValidationError("x_upper must be positive when set")
        if not self.eta > -1:
            raise ValidationError("eta must exceed -1")

    @property
    def excess_return(self) -> float:
        return self.pi / self.F - self.r


@dataclass(frozen=True)
class DynamicsOptions:
    avoidance: bool = False
    turnover: bool = False
    fragment_avoidance: bool = False


CONSTANT = "constant"
TIME_VARYING = "time-varying"
MODES = (CONSTANT, TIME_VARYING)


@dataclass(frozen=True)
class Scenario:
    """Economic and physical parameters plus the dynamics options in force.

    ``fragment_avoidance`` scales the satellite-involved fragment channels by
    the avoidance failure rates, so avoided collisions create no fragments.
    """

    econ: EconParams
    phys: PhysicalParams
    mode: str = CONSTANT
    start_year: int = 2020
    avoidance: bool = False
    turnover: bool = False
    fragment_avoidance: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def options(self) -> DynamicsOptions:
        return DynamicsOptions(self.avoidance, self.turnover, self.fragment_avoidance)

    @property
    def tau(self) -> float:
        """Constant-mode isoquant level, the excess return."""
        return self.econ.excess_return

    def with_overrides(self, **overrides: Any) -> "Scenario":
        """Return a copy with any econ/phys/scenario field replaced by name."""
        econ_names = {f.name for f in fields(EconParams)}
        phys_names = {f.name for f in fields(PhysicalParams)}
        own_names = {f.name for f in fields(Scenario)} - {"econ", "phys"}
        econ_kw, phys_kw, own_kw = {}, {}, {}
        for k, v in overrides.items():
            if k in econ_names:
                econ_kw[k] = v
            elif k in phys_names:
                phys_kw[k] = v
            elif k in own_names:
                own_kw[k] = v
            else:
                raise ValidationError(f"unknown parameter {k!r}")
        return replace(
            self,
            econ=replace(self.econ, **econ_kw),
            phys=replace(self.phys, **phys_kw),
            **own_kw,
        )

    def to_flat(self) -> dict[str, Any]:
        flat: dict[str, Any] = {}
        flat.update(asdict(self.phys))
        flat.update(asdict(self.econ))
        flat.update(
            mode=self.mode,
            start_year=self.start_year,
            avoidance=self.avoidance,
            turnover=self.turnover,
            fragment_avoidance=self.fragment_avoidance,
        )
        return flat


# Rounded published calibration for the 600-650 km shell.
TABLE4_PHYSICAL = PhysicalParams(
    alpha_ss=2.73e-7,
    alpha_sd=2.73e-7,
    alpha_dd=2.78e-7,
    beta_ss=1800.0,
    beta_sd=333.0,
    beta_dd=327.0,
    delta=0.074,
    m=0.013,
    mu=0.15,
    kappa_ss=0.99,
    kappa_sd=0.95,
)
TABLE4_GAMMAS = (3.35e-6, 2.22e-5, -2.67e-6)
TABLE4_COST_GROWTH = 0.025
INITIAL_2020 = OrbitState(158.0, 626.0)


# --------------------------------------------------------------------------
# config IO

_BOOL_KEYS = {"avoidance", "turnover", "fragment_avoidance"}
_STR_KEYS = {"mode"}
_INT_KEYS = {"start_year"}


def _parse_value(key: str, raw: str) -> Any:
    raw = raw.strip()
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key}: cannot parse boolean {raw!r}")
    if key in _STR_KEYS:
        return raw
    if key in _INT_KEYS:
        return int(raw)
    if raw.lower() in ("none", "inf", ""):
        return None
    try:
        return float(raw)
    except ValueError as exc:
        raise ValidationError(f"{key}: cannot parse number {raw!r}") from exc


def _format_value(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config(path: str | Path) -> tuple[dict[str, Any], dict[str, str]]:
    """Parse a config file into (flat params, provenance)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep key case
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    parser.read(path)
    if "params" not in parser:
        raise ValidationError(f"{path}: missing [params] section")
    flat = {k: _parse_value(k, v) for k, v in parser["params"].items()}
    prov = dict(parser["provenance"]) if "provenance" in parser else {}
    return flat, prov


def write_config(path: str | Path, flat: Mapping[str, Any], provenance: Mapping[str, Any] | None = None) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["params"] = {k: _format_value(v) for k, v in flat.items()}
    if provenance:
        parser["provenance"] = {k: str(v) for k, v in provenance.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def _pick(flat: Mapping[str, Any], cls) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in flat.items() if k in names and (v is not None or k == "x_upper")}


def physical_from_flat(flat: Mapping[str, Any]) -> PhysicalParams:
    kw = _pick(flat, PhysicalParams)
    try:
        return PhysicalParams(**kw)
    except TypeError as exc:
        raise ValidationError(f"incomplete physical parameters: {exc}") from exc


def econ_from_flat(flat: Mapping[str, Any]) -> EconParams:
    kw = _pick(flat, EconParams)
    try:
        return EconParams(**kw)
    except TypeError as exc:
        raise ValidationError(f"incomplete economic parameters: {exc}") from exc


def scenario_from_flat(flat: Mapping[str, Any]) -> Scenario:
    own = {k: flat[k] for k in ("mode", "start_year", *_BOOL_KEYS) if k in flat}
    return Scenario(econ=econ_from_flat(flat), phys=physical_from_flat(flat), **own)


def load_scenario(path: str | Path) -> Scenario:
    flat, _ = read_config(path)
    return scenario_from_flat(flat)


def save_scenario(path: str | Path, scenario: Scenario, provenance: Mapping[str, Any] | None = None) -> None:
    write_config(path, scenario.to_flat(), provenance)
