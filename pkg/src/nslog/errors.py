"""Exception hierarchy shared by every nslog module."""
from __future__ import annotations


class NslogError(Exception):
    """Base class for all package errors."""


class DomainError(NslogError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class ConfigError(NslogError, ValueError):
    """Invalid configuration: bad key, bad value, or unsupported setup."""

    def __init__(self, message, *, key=None, line=None):
        self.key = key
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"{key}: "
        super().__init__(prefix + message)


class PreconditionError(NslogError, ValueError):
    """Input data violates an operation precondition (e.g. divergence check)."""


class DataError(NslogError, ValueError):
    """Malformed or non-finite field data."""


class ConstructionError(NslogError, ValueError):
    """A requested field construction is not achievable."""


class EstimatorError(NslogError, ValueError):
    """A statistical estimator has no usable data."""


class FitError(EstimatorError):
    """Not enough samples for a regression."""


class NumericalError(NslogError, ArithmeticError):
    """Base for failures of a numerical time integration."""


class BlowUpError(NumericalError):
    """Evaluation requested at or beyond a finite blow-up time."""

    def __init__(self, message, t_star):
        self.t_star = t_star
        super().__init__(message)


class StiffnessError(NumericalError):
    """Step size underflow without a detected blow-up."""


class DivergenceError(NumericalError):
    """Non-finite values appeared in a simulated field."""

    def __init__(self, message, t):
        self.t = t
        super().__init__(message)


class StabilityError(NumericalError):
    """Time step collapsed below the allowed minimum."""
