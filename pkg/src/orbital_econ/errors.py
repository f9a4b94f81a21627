"""Exception hierarchy shared by the simulation modules and the CLI."""
from __future__ import annotations


class OrbitEconError(Exception):
    """Base class for all package errors."""


class DomainError(OrbitEconError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ValidationError(OrbitEconError, ValueError):
    """Input data or configuration failed a schema or consistency check."""


class NoPositiveLaunchError(OrbitEconError):
    """The entry condition for positive launches is violated."""


class UnboundedEquilibriumError(OrbitEconError):
    """No finite launch rate satisfies the equilibrium condition."""


class ConvergenceError(OrbitEconError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
