"""Newline-delimited JSON messages exchanged between verifier and platforms.

Every message is one JSON object with a ``type`` field on its own line.
"""

from __future__ import annotations

import enum
import json

from .. import __version__

PROTOCOL_VERSION = 1
IMPLEMENTATION = f"xpv/{__version__}"
MAX_BATCH = 64
MAX_LINE = 64 * 1024 * 1024


class MsgType(str, enum.Enum):
    HELLO = "hello"
    SCHEDULE_OFFER = "schedule_offer"
    RECORDS = "records"
    ACK = "ack"
    COMPLETE = "complete"
    REPORT = "report"
    ERROR = "error"


class ErrorCode(str, enum.Enum):
    SCHEDULE_MISMATCH = "SCHEDULE_MISMATCH"
    SESSION_FULL = "SESSION_FULL"
    BAD_MESSAGE = "BAD_MESSAGE"


class WireError(Exception):
    """An Error message received from (or to be sent to) the peer."""

    def __init__(self, code: ErrorCode | str, detail: str = ""):
        super().__init__(f"{code}: {detail}")
        self.code = ErrorCode(code)
        self.detail = detail


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode()


def decode(line: bytes) -> dict:
    """Parse one line; anything that is not a typed JSON object is BAD_MESSAGE."""
    try:
        msg = json.loads(line)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(ErrorCode.BAD_MESSAGE, f"not JSON: {exc}") from None
    if not isinstance(msg, dict) or "type" not in msg:
        raise WireError(ErrorCode.BAD_MESSAGE, "message must be an object with a 'type' field")
    try:
        MsgType(msg["type"])
    except ValueError:
        raise WireError(ErrorCode.BAD_MESSAGE, f"unknown message type {msg['type']!r}") from None
    return msg


def hello(platform_id: str, session_id: str | None = None) -> dict:
    msg = {"type": "hello", "platform_id": platform_id, "protocol_version": PROTOCOL_VERSION, "implementation": IMPLEMENTATION}
    if session_id:
        msg["session_id"] = session_id
    return msg


def records(schedule_ref: str, header: dict, batch: list, seq: int) -> dict:
    if len(batch) > MAX_BATCH:
        raise ValueError(f"batches hold at most {MAX_BATCH} records")
    return {"type": "records", "schedule_ref": schedule_ref, "header": header, "seq": seq, "batch": batch}


def ack(seq: int, next_u: int, received: int) -> dict:
    return {"type": "ack", "seq": seq, "next_u": next_u, "received": received}


def complete() -> dict:
    return {"type": "complete"}


def error(code: ErrorCode, detail: str) -> dict:
    return {"type": "error", "code": ErrorCode(code).value, "detail": detail}
