"""Exception types shared across the solver pipeline."""


class PpifeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PpifeError):
    """Invalid run configuration (bad key, malformed value, broken invariant)."""


class GeometryError(PpifeError):
    """Inconsistent interface geometry that is not a resolution problem."""


class MultipleCrossings(GeometryError):
    """The interface crosses a single edge more than once: mesh too coarse."""


class DegenerateCut(GeometryError):
    """Chord shorter than the snap tolerance; element is treated as uncut."""


class SingularLocalSystem(PpifeError):
    """Local jump-condition system is numerically singular (degenerate cut)."""


class UnsupportedDegree(PpifeError):
    """Quadrature degree outside the supported range."""


class DegeneratePolygon(PpifeError):
    """Sub-polygon with (numerically) vanishing area."""


class AsymmetricInput(PpifeError):
    """A symmetric solver was handed a matrix that fails the symmetry check."""


class NotConverged(PpifeError):
    """Iterative solver exhausted its budget; best iterate is attached."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegenerateGradient(PpifeError):
    """Sampled function is locally constant; trace ratio undefined."""
