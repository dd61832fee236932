"""Exception hierarchy shared by all modules."""


class CCAdmmError(Exception):
    """Base class for every error raised by this package."""


class GraphError(CCAdmmError, ValueError):
    pass


class SelfLoopError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class DisconnectedError(GraphError):
    pass


class IndexOutOfRangeError(GraphError, IndexError):
    pass


class DimensionMismatchError(CCAdmmError, ValueError):
    pass


class BadParameterError(CCAdmmError, ValueError):
    pass


class NotQuadraticError(CCAdmmError, TypeError):
    pass


class SingularKKTError(CCAdmmError):
    """The KKT matrix is singular: strong convexity or full row rank fails."""


class DivergedError(CCAdmmError, RuntimeError):
    pass


class NonFiniteStateError(CCAdmmError, FloatingPointError):
    pass


class NotANeighborError(CCAdmmError, ValueError):
    pass


class SpectralAmbiguityError(CCAdmmError):
    """An eigenvalue of the z-transition sits too close to the unit circle to classify."""


class SingularSolveError(CCAdmmError):
    pass


class NoCertifiedPError(CCAdmmError):
    pass


class NotSchurError(CCAdmmError):
    pass


class ConfigError(CCAdmmError, ValueError):
    pass


class MaxIterError(CCAdmmError, RuntimeError):
    """Iteration budget exhausted without meeting the tolerance."""
