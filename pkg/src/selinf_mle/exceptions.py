class SelinfError(Exception):
    """Base class for errors raised by this package."""


class DomainError(SelinfError, ValueError):
    """An argument lies outside the domain of the operation."""


class SolverError(SelinfError, RuntimeError):
    """An iterative solver did not converge."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EmptySelection(SelinfError):
    """A selection query returned no active variables."""


class InconsistentKKT(SelinfError):
    """The affine KKT map does not reproduce the observed randomization."""


class DegenerateSelection(SelinfError):
    """A Monte-Carlo check accepted no draws from the selection event."""


class NumericalError(SelinfError, ArithmeticError):
    """Loss of positive definiteness or similar numerical breakdown."""
