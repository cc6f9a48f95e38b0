"""Exception hierarchy used across the package."""


class ClusterError(Exception):
    """Base class for all package errors."""


class InvalidParameter(ClusterError, ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class NumericalSingularity(ClusterError, ArithmeticError):
    """A matrix that must be inverted is (numerically) singular."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class PhysicalityError(ClusterError, ValueError):
    """The state is not a physical pure Gaussian state (U not positive definite)."""


class DataShapeError(ClusterError, ValueError):
    """A dataset does not contain the modes or basis required."""


class WitnessIntegrityError(ClusterError):
    """A stored inseparability witness violates its invariants."""


class FitError(ClusterError, RuntimeError):
    """Nonlinear least squares did not converge."""

    def __init__(self, message, cost=None, gradient_norm=None):
        super().__init__(message)
        self.cost = cost
        self.gradient_norm = gradient_norm


class BipartitenessError(ClusterError, ValueError):
    """A graph expected to be bipartite has an odd cycle."""
