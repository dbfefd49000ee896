"""Exception types shared across the package."""


class PlatoonError(Exception):
    """Base class for all package errors."""


class InvalidInputError(PlatoonError, ValueError):
    """An argument violates the documented precondition of an operation."""


class RangeError(InvalidInputError):
    """A query falls outside the domain covered by the data."""


class ConfigError(PlatoonError, ValueError):
    """A configuration file, coefficient table, or checkpoint is unusable."""


class NumericAbort(PlatoonError, ArithmeticError):
    """Training or simulation produced non-finite numbers."""
