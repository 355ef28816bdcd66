"""Verifier service: two platforms receive one schedule and send outcome records back."""

from .client import client_run
from .protocol import PROTOCOL_VERSION, ErrorCode, WireError
from .server import SessionConfig, SessionState, replay_transcript, serve

__all__ = [
    "PROTOCOL_VERSION",
    "ErrorCode",
    "SessionConfig",
    "SessionState",
    "WireError",
    "client_run",
    "replay_transcript",
    "serve",
]
