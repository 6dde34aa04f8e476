"""Exception types raised by the package."""


class DomainError(ValueError):
    """Input lies outside the domain of an operation."""


class ResourceError(MemoryError):
    """Requested problem size exceeds a configured guard."""


class SingularSystemError(ArithmeticError):
    """Raised when a factorization encounters a (near) zero pivot.

    Parameters
    ----------
    message : str
        Human readable description.
    pivot : int or None
        Index (in the original column numbering) of the deficient pivot,
        when it could be identified.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SolverAccuracyError(ArithmeticError):
    """A solve finished with a relative residual above tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual
