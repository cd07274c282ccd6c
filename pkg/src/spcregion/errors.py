"""Exception hierarchy shared by every module of the package."""


class SpcRegionError(Exception):
    """Base class for all package errors."""


class ChannelError(SpcRegionError, ValueError):
    pass


class DegradednessViolation(ChannelError):
    """A noise ladder is not strictly increasing."""

    def __init__(self, i, j, lower, upper):
        self.i = i
        self.j = j
        super().__init__(
            f"DegradednessViolation(i={i}, j={j}): N{i}^{j}={lower!r} must be "
            f"strictly less than N{i}^{j + 1}={upper!r}"
        )


class NonpositiveParameter(ChannelError):
    pass


class InvalidPartition(SpcRegionError, ValueError):
    pass


class NegativeArgument(SpcRegionError, ValueError):
    pass


class PointShapeMismatch(SpcRegionError, TypeError):
    pass


class R0OutOfRange(SpcRegionError, ValueError):
    pass


class InfeasibleR0(SpcRegionError, ValueError):
    pass


class DomainViolation(SpcRegionError, ValueError):
    pass


class SingularAtBoundary(SpcRegionError, ValueError):
    pass


class UnsupportedOrdering(SpcRegionError, ValueError):
    pass


class TiedWeights(SpcRegionError, ValueError):
    pass
