"""Cross-platform verification of quantum states from randomized measurements."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ChannelError,
    DegenerateInput,
    FitRejected,
    InvalidSubsystem,
    ModeError,
    ProtocolError,
    ShapeError,
    Unsupported,
    XpvError,
)
