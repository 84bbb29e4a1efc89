"""Exception types shared across the package."""


class SingdriftError(Exception):
    """Base class."""


class DomainError(SingdriftError, ValueError):
    """An argument lies outside the domain of the operation."""


class RegimeError(SingdriftError):
    """Parameters fall outside the regime an operation is valid for.

    ``classification`` carries the regime verdict when one was computed.
    """

    def __init__(self, message, classification=None):
        super().__init__(message)
        self.classification = classification


class GridResolutionError(SingdriftError):
    """A spatial or time grid is too coarse for the requested operation."""

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class NumericalError(SingdriftError, ArithmeticError):
    """Quadrature, factorisation or sampling failed."""
