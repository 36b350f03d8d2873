"""Exception hierarchy shared by every module.

Each class maps to one failure family so callers (and the CLI exit-code
table) can dispatch on type rather than on message text.
"""


class SAOTError(Exception):
    """Base class for all package errors."""


class DimensionError(SAOTError, ValueError):
    """Array shapes are incompatible with an operation."""


class ConfigurationError(SAOTError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ValidationError(SAOTError, ValueError):
    """An argument value is outside its allowed range."""


class EvenDimensionError(DimensionError):
    """A spatial dimension that must be even is odd."""


class NumericError(SAOTError, ArithmeticError):
    """Non-finite values or numerical breakdown."""


class SymmetryError(NumericError):
    """A spectrum expected to be Hermitian has a large imaginary residual."""


class MetricError(NumericError):
    """A metric is undefined for the given inputs (e.g. zero-norm target)."""


class ConvergenceError(NumericError):
    """An iterative solver exhausted its budget."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DeterminismError(SAOTError, RuntimeError):
    """A function returned different values for identical inputs."""


class FormatError(SAOTError, ValueError):
    """A file is truncated, corrupted, or does not match its declared layout."""
