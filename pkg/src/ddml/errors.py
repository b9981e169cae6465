"""Exception types raised across the package."""


class DDMLError(Exception):
    """Base class for all package errors."""


class ShapeError(DDMLError, ValueError):
    """Array dimensions do not agree."""


class InputError(DDMLError, ValueError):
    """Invalid argument value or malformed input data."""


class NumericError(DDMLError, ArithmeticError):
    """A NaN or infinity appeared where a finite value is required."""


class StateError(DDMLError, RuntimeError):
    """An operation was called out of order."""
