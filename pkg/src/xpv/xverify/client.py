"""A platform joining a verification session."""

from __future__ import annotations

import socket
from dataclasses import dataclass
from pathlib import Path

from ..estimate import EstimateReport
from ..measure import MeasurementDataset, acquire_dataset, dataset_header, read_dataset, record_to_json
from ..qcore import StateKind, StateSpec, build_pure, build_state
from ..randsrc import UnitarySchedule, schedule_from_json
from . import protocol
from .protocol import MAX_BATCH, WireError


@dataclass(frozen=True)
class SimulatorSource:
    """Simulate the platform: ``state`` is a state spec such as ``pp:4:seed=3``; ``shots=None`` is exact."""

    state: str
    shots: int | None = None
    seed: int = 0
    platform: int = 0

    def acquire(self, schedule: UnitarySchedule, platform_id: str) -> MeasurementDataset:
        spec = StateSpec.parse(self.state)
        if spec.kind in (StateKind.PURE_PRODUCT, StateKind.PURE_HAAR_RANDOM, StateKind.NEEL):
            st = build_pure(spec)
        else:
            st = build_state(spec)
        return acquire_dataset(st, schedule, self.shots, self.seed, platform_id, self.platform)


def _dataset_for(source, schedule: UnitarySchedule, platform_id: str) -> MeasurementDataset:
    if isinstance(source, MeasurementDataset):
        return source
    if isinstance(source, (str, Path)):
        return read_dataset(source)
    if callable(source):
        return source(schedule)
    return source.acquire(schedule, platform_id)


class _Conn:
    def __init__(self, address: str, timeout: float):
        host, _, port = address.rpartition(":")
        self.sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
        self.rfile = self.sock.makefile("rb")

    def send(self, msg: dict) -> None:
        self.sock.sendall(protocol.encode(msg))

    def recv(self) -> dict:
        line = self.rfile.readline(protocol.MAX_LINE)
        if not line:
            raise ConnectionError("verifier closed the connection")
        msg = protocol.decode(line)
        if msg["type"] == "error":
            raise WireError(msg["code"], msg.get("detail", ""))
        return msg

    def expect(self, kind: str) -> dict:
        msg = self.recv()
        if msg["type"] != kind:
            raise WireError(protocol.ErrorCode.BAD_MESSAGE, f"expected {kind}, got {msg['type']}")
        return msg

    def close(self) -> None:
        try:
            self.rfile.close()
        finally:
            self.sock.close()


def client_run(
    address: str,
    platform_id: str,
    source,
    session_id: str | None = None,
    batch_size: int = MAX_BATCH,
    timeout: float = 120.0,
    stop_after_batches: int | None = None,
) -> EstimateReport | None:
    """Join the session at ``address``, stream records, and return the verifier's report.

    ``source`` is a :class:`SimulatorSource`, a dataset, a dataset file, or a
    callable taking the schedule. Pass the ``session_id`` of an interrupted
    run to resume after the last acknowledged record. ``stop_after_batches``
    drops the connection on purpose (returns None); it exists for testing
    resumption.
    """
    if not 1 <= batch_size <= MAX_BATCH:
        raise ValueError(f"batch_size must be in [1, {MAX_BATCH}]")
    conn = _Conn(address, timeout)
    try:
        conn.send(protocol.hello(platform_id, session_id))
        offer = conn.expect("schedule_offer")
        schedule = schedule_from_json(offer["schedule"])
        if schedule.ref != offer["schedule_ref"]:
            raise WireError(protocol.ErrorCode.SCHEDULE_MISMATCH, "offered schedule does not hash to its reference")
        ds = _dataset_for(source, schedule, platform_id)
        header = {k: v for k, v in dataset_header(ds).items() if k in ("N", "d", "N_U", "exact", "mode")}
        start = int(offer.get("resume_from", 0))
        pending = list(range(start, ds.n_u))
        for seq, i in enumerate(range(0, len(pending), batch_size)):
            if stop_after_batches is not None and seq >= stop_after_batches:
                return None
            batch = [record_to_json(ds, u) for u in pending[i : i + batch_size]]
            conn.send(protocol.records(ds.schedule_ref, header, batch, seq))
            conn.expect("ack")
        conn.send(protocol.complete())
        return EstimateReport.from_dict(conn.expect("report")["report"])
    finally:
        conn.close()
