"""Exception hierarchy used across the package."""


class GeomSDEError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(GeomSDEError, ValueError):
    """A dimension argument violates its lower bound or shapes disagree."""


class InvalidInputError(GeomSDEError, ValueError):
    """Input values violate a documented precondition."""


class NumericalError(GeomSDEError, ArithmeticError):
    """A computation produced non-finite values or a decomposition failed."""


class ExtrapolationWarning(UserWarning):
    """A drift was evaluated outside its declared interval."""
