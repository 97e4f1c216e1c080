"""Exception types raised by the solvers."""


class OrbitLabError(Exception):
    """Base class for all library errors."""


class TubeExit(OrbitLabError):
    """A point left the tubular neighbourhood of the critical manifold."""


class DegenerateNormal(OrbitLabError):
    """The distance gradient is too small for a reliable normal."""


class NondegeneracyViolation(OrbitLabError):
    """The potential is not in normal form near the manifold."""


class NotAGeodesic(OrbitLabError):
    pass


class MaxItersExceeded(OrbitLabError):
    pass


class ClassDrift(OrbitLabError):
    """A descent step changed the homotopy class of the loop."""


class DegenerateGeodesic(OrbitLabError):
    """The Jacobi operator has kernel beyond the symmetry directions."""


class ResonantLambda(OrbitLabError):
    """The constant coefficient sits on the periodic spectrum."""


class FixedPointDiverged(OrbitLabError):
    pass


class NewtonDiverged(OrbitLabError):
    pass


class SingularJacobian(OrbitLabError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class AdmissibilityFailed(OrbitLabError):
    pass


class ContractionFailed(OrbitLabError):
    pass


class InsufficientPoints(OrbitLabError):
    pass


class ConfigError(OrbitLabError):
    pass


class ConsistencyCheckFailed(OrbitLabError):
    """An internal identity that must hold up to discretization failed."""
