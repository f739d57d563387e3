"""Exception types shared across the package."""

from __future__ import annotations


class EntriskError(Exception):
    """Base class for all errors raised by this package."""


class InputError(EntriskError):
    """Malformed or inconsistent user input (arrays, configs, parameters)."""


class ConvergenceError(EntriskError):
    """An iterative solver exhausted its budget without converging or
    proving divergence."""

    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class InfeasibleRiskError(EntriskError):
    """The requested risk budget lies outside the attainable range.

    Carries the attainable bounds so callers can report them.
    """

    def __init__(self, gamma: float, gamma1: float, gamma2: float):
        super().__init__(
            f"risk budget gamma={gamma:.10g} is below the attainable minimum "
            f"gamma1={gamma1:.10g} (unconstrained optimum sits at gamma2={gamma2:.10g})"
        )
        self.gamma = gamma
        self.gamma1 = gamma1
        self.gamma2 = gamma2
