"""Exception hierarchy shared by all boundaryflow modules."""


class BoundaryFlowError(Exception):
    """Base class for all errors raised by this package."""


class DegeneratePoint(BoundaryFlowError):
    """Projection onto the manifold is undefined or non-unique at this point."""


class RankDeficient(BoundaryFlowError):
    """Constraint Jacobian loses rank (e.g. the cone apex)."""


class NonUniqueGeodesic(BoundaryFlowError):
    """The two points are joined by more than one minimizing geodesic."""


class IdenticalEndpoints(BoundaryFlowError):
    """Start and end point coincide; no curve can be constructed."""


class EmptyNeighborhood(BoundaryFlowError):
    """Fewer than two data points fall inside the kernel window."""


class SpectralGapTooSmall(BoundaryFlowError):
    """Top two covariance eigenvalues are too close to define a direction."""


class SingularMass(BoundaryFlowError):
    """The speed multiplier is zero, so the mass matrix is singular."""


class NewtonDiverged(BoundaryFlowError):
    """The damped Newton iteration failed to reduce the collocation residual."""


class RhsFailure(BoundaryFlowError):
    """The ODE right-hand side failed at some collocation time."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class NoConvergence(BoundaryFlowError):
    """An iterative procedure exhausted its iteration budget."""


class OutOfRange(BoundaryFlowError):
    """Scalar argument outside its admissible interval."""


class ZeroSegment(BoundaryFlowError):
    """A discrete curve contains a repeated node."""


class ZeroLeadingEigenvalue(BoundaryFlowError):
    """lambda_1 vanishes; ratios of the spectrum are undefined."""


class NoCrossing(BoundaryFlowError):
    """The leading coordinate of the path never crosses zero."""


class LengthBudgetExceeded(BoundaryFlowError):
    """A constructed curve exceeds the unit length budget."""


class GridTooLarge(BoundaryFlowError):
    """Lattice too large for exhaustive dynamic programming."""


class UnknownScenario(BoundaryFlowError):
    """Requested synthetic data scenario does not exist."""


class ParseError(BoundaryFlowError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class RangeError(BoundaryFlowError):
    """A coordinate value is outside its physical range."""


class ConfigError(BoundaryFlowError):
    """Experiment configuration is invalid."""
