"""Exception types raised across the package."""


class XpvError(Exception):
    """Base class for all package errors."""


class InvalidSubsystem(XpvError, ValueError):
    pass


class ShapeError(XpvError, ValueError):
    pass


class DegenerateInput(XpvError, ValueError):
    pass


class ProtocolError(XpvError):
    """Datasets cannot be combined: different schedules or unitary indices."""


class ModeError(XpvError, ValueError):
    pass


class ChannelError(XpvError, ValueError):
    pass


class Unsupported(XpvError, NotImplementedError):
    pass


class FitRejected(XpvError):
    """A scaling fit is too poor (or too short) to report an exponent."""
