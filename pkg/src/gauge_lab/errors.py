"""Exception types raised by gauge_lab."""


class GaugeLabError(Exception):
    """Base class for all library errors."""


class NonFiniteState(GaugeLabError, ArithmeticError):
    """An integrated state became NaN or infinite."""


class OutOfDomain(GaugeLabError, ValueError):
    """A time argument lies outside the interval [0, T]."""


class SingularGauge(GaugeLabError, ArithmeticError):
    """A gauge matrix is numerically singular."""


class GridMismatch(GaugeLabError, ValueError):
    """Two objects live on incompatible time grids."""


class ShapeError(GaugeLabError, ValueError):
    """Array shapes are inconsistent."""


class NonPositiveAlpha(GaugeLabError, ValueError):
    """A rescaling factor is not strictly positive."""


class StructureError(GaugeLabError, ValueError):
    """A network does not have the structure a transformation needs."""


class ConstraintViolation(GaugeLabError, ValueError):
    """Gauge parameters do not satisfy their defining constraint."""


class HolonomyViolation(GaugeLabError, ValueError):
    """The Wilson line around [0, T] is not the identity."""


class Divergence(GaugeLabError, ArithmeticError):
    """Training produced a non-finite loss."""


class ConfigError(GaugeLabError, ValueError):
    """An experiment configuration is invalid."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
