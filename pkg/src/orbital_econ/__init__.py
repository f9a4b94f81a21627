"""Orbital-use economics: open access, the fleet planner and Kessler Syndrome.

Modules: :mod:`dynamics` (laws of motion), :mod:`simple_model` (three-period
model), :mod:`open_access` (equilibrium launches and steady states),
:mod:`planner` (value-function iteration and external cost), :mod:`phase`
(basins, nullclines, overshooting, Kessler times), :mod:`calibration`
(regressions on the bundled panels) and :mod:`cli`.
"""
from __future__ import annotations

from .errors import (
    ConvergenceError,
    DomainError,
    NoPositiveLaunchError,
    OrbitEconError,
    UnboundedEquilibriumError,
    ValidationError,
)
from .params import (
    DynamicsOptions,
    EconParams,
    OrbitState,
    PhysicalParams,
    Scenario,
    load_scenario,
    save_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "DomainError",
    "DynamicsOptions",
    "EconParams",
    "NoPositiveLaunchError",
    "OrbitEconError",
    "OrbitState",
    "PhysicalParams",
    "Scenario",
    "UnboundedEquilibriumError",
    "ValidationError",
    "load_scenario",
    "save_scenario",
    "__version__",
]
