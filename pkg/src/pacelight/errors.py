"""Exception types shared across the package."""


class PaceError(Exception):
    """Base class for all pacelight errors."""


class NonPositiveExtent(PaceError):
    pass


class GridTooSmall(PaceError):
    pass


class RectangleOutOfBody(PaceError):
    pass


class NonPositivePermittivity(PaceError):
    pass


class UnknownPort(PaceError):
    pass


class ShapeMismatch(PaceError):
    pass


class SingularSystem(PaceError):
    pass


class NoConvergence(PaceError):
    pass


class IndivisibleChannels(PaceError):
    pass


class ModeOrderingViolation(PaceError):
    pass


class ZeroTargetNorm(PaceError):
    pass


class IncompatibleSamples(PaceError):
    pass


class EmptyDataset(PaceError):
    pass


class IncompatibleCheckpoint(PaceError):
    pass


class MalformedReport(PaceError):
    pass


class CorruptRecord(PaceError):
    pass
