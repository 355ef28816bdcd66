"""The verifier: hands out one schedule, collects records from two platforms, reports.

Session state is only mutated under one lock; estimation runs in a worker
thread once both platforms have completed. Every inbound and outbound
message is appended to an NDJSON transcript, from which
:func:`replay_transcript` recomputes the report.
"""

from __future__ import annotations

import asyncio
import json
import secrets
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..estimate import EstimateReport, Variant, estimate_fidelities
from ..measure import MeasurementDataset, dataset_from_parts
from ..randsrc import Ensemble, Mode, SchedulePlan, UnitarySchedule, sample_schedule, schedule_to_json
from ..resample import BootstrapConfig
from . import protocol
from .protocol import IMPLEMENTATION, PROTOCOL_VERSION, ErrorCode, WireError


@dataclass(frozen=True)
class SessionConfig:
    n_u: int
    n_sites: int
    local_dim: int = 2
    mode: str = "local"
    ensemble: str = "haar_cue"
    master_seed: int = 0
    bootstrap_resamples: int = 400
    bootstrap_seed: int = 0
    variant: str = "ustat"
    offer_form: str = "matrices"
    session_id: str | None = None
    transcript: str | None = None
    timeout: float = 300.0

    def __post_init__(self):
        if self.offer_form not in ("matrices", "seed"):
            raise ValueError("offer_form must be 'matrices' or 'seed'")

    @classmethod
    def from_dict(cls, obj: dict) -> "SessionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown session keys: {sorted(unknown)}")
        return cls(**obj)

    def schedule(self) -> UnitarySchedule:
        plan = SchedulePlan(self.n_u, self.n_sites, self.local_dim, Mode(self.mode), Ensemble(self.ensemble), self.master_seed)
        return sample_schedule(plan)

    @property
    def bootstrap(self) -> BootstrapConfig | None:
        if self.bootstrap_resamples <= 0:
            return None
        return BootstrapConfig(self.bootstrap_resamples, self.bootstrap_seed)


@dataclass
class PlatformState:
    platform_id: str
    header: dict | None = None
    records: dict = field(default_factory=dict)
    complete: bool = False
    connected: bool = False
    conn: int = 0  # id of the connection currently serving this platform
    writer: object = field(default=None, repr=False)

    @property
    def next_u(self) -> int:
        u = 0
        while u in self.records:
            u += 1
        return u


@dataclass
class SessionState:
    session_id: str
    schedule: UnitarySchedule
    platforms: dict = field(default_factory=dict)
    report: EstimateReport | None = None

    @property
    def ready(self) -> bool:
        return len(self.platforms) == 2 and all(p.complete for p in self.platforms.values())


# --------------------------------------------------------------------------
# pure session logic, shared by the live server and transcript replay


def check_records(state: SessionState, plat: PlatformState, msg: dict) -> int:
    """Validate a Records message and store new records; returns how many were new.

    Records for a unitary already held are dropped (at-most-once ingestion).
    """
    sched = state.schedule
    if msg.get("schedule_ref") != sched.ref:
        raise WireError(ErrorCode.SCHEDULE_MISMATCH, "records were measured with a different schedule")
    header = msg.get("header") or {}
    try:
        shape = (int(header["N"]), int(header["d"]), int(header["N_U"]), header.get("mode", "local"))
        exact = bool(header["exact"])
    except (KeyError, TypeError, ValueError):
        raise WireError(ErrorCode.BAD_MESSAGE, "records header needs N, d, N_U, exact") from None
    if shape != (sched.n_sites, sched.local_dim, sched.n_u, sched.mode.value):
        raise WireError(ErrorCode.BAD_MESSAGE, "records header does not match the schedule")
    if plat.header is not None and plat.header["exact"] != exact:
        raise WireError(ErrorCode.BAD_MESSAGE, "platform switched between exact and sampled records")
    batch = msg.get("batch")
    if not isinstance(batch, list) or len(batch) > protocol.MAX_BATCH:
        raise WireError(ErrorCode.BAD_MESSAGE, f"batch must be a list of at most {protocol.MAX_BATCH} records")
    plat.header = {"N": shape[0], "d": shape[1], "N_U": shape[2], "mode": shape[3], "exact": exact}
    new = 0
    for rec in batch:
        try:
            u = int(rec["u"])
        except (KeyError, TypeError, ValueError):
            raise WireError(ErrorCode.BAD_MESSAGE, "record without unitary index") from None
        if not 0 <= u < sched.n_u:
            raise WireError(ErrorCode.BAD_MESSAGE, f"unitary index {u} out of range")
        if ("probs" if exact else "counts") not in rec:
            raise WireError(ErrorCode.BAD_MESSAGE, f"record {u} has the wrong payload")
        if u not in plat.records:
            plat.records[u] = rec
            new += 1
    return new


def platform_dataset(state: SessionState, plat: PlatformState) -> MeasurementDataset:
    header = dict(plat.header, platform_id=plat.platform_id, schedule_ref=state.schedule.ref)
    return dataset_from_parts(header, [plat.records[u] for u in sorted(plat.records)])


def compute_report(state: SessionState, variant: str, bootstrap: BootstrapConfig | None) -> EstimateReport:
    """Platforms enter in platform-id order, so the report does not depend on arrival order."""
    p1, p2 = (state.platforms[k] for k in sorted(state.platforms))
    ds1, ds2 = platform_dataset(state, p1), platform_dataset(state, p2)
    return estimate_fidelities(ds1, ds2, None, Variant(variant), bootstrap)


# --------------------------------------------------------------------------
# transcript


class Transcript:
    def __init__(self, path: str | None, header: dict):
        self.entries: list = []
        self._fh = open(path, "w") if path else None
        self._write({"type": "session", **header})

    def _write(self, entry: dict) -> None:
        self.entries.append(entry)
        if self._fh:
            self._fh.write(json.dumps(entry, separators=(",", ":")) + "\n")
            self._fh.flush()

    def log(self, direction: str, conn: int, peer: str | None, msg=None, raw: str | None = None) -> None:
        entry = {"ts": time.time(), "dir": direction, "conn": conn, "peer": peer}
        if msg is not None:
            entry["msg"] = msg
        if raw is not None:
            entry["raw"] = raw
        self._write(entry)

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def replay_transcript(path_or_entries) -> EstimateReport | None:
    """Recompute the report from the inbound messages of a transcript."""
    if isinstance(path_or_entries, (str, Path)):
        with open(path_or_entries) as fh:
            entries = [json.loads(line) for line in fh if line.strip()]
    else:
        entries = list(path_or_entries)
    head = entries[0]
    cfg = SessionConfig.from_dict(head["config"])
    state = SessionState(head["session_id"], cfg.schedule())
    if state.schedule.ref != head["schedule_ref"]:
        raise ValueError("transcript schedule cannot be regenerated from its config")
    for e in entries[1:]:
        if "msg" not in e or e.get("peer") is None:
            continue
        msg, pid = e["msg"], e["peer"]
        if e["dir"] == "out":
            # the verifier accepted this platform
            if msg["type"] == "schedule_offer" and pid not in state.platforms:
                state.platforms[pid] = PlatformState(pid)
            continue
        plat = state.platforms.get(pid)
        if plat is None:
            continue
        try:
            if msg["type"] == "records":
                check_records(state, plat, msg)
            elif msg["type"] == "complete" and len(plat.records) == state.schedule.n_u:
                plat.complete = True
        except WireError:
            continue
    if not state.ready:
        return None
    return compute_report(state, cfg.variant, cfg.bootstrap)


# --------------------------------------------------------------------------
# live server


class Verifier:
    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        self.state = SessionState(cfg.session_id or secrets.token_hex(8), cfg.schedule())
        self.transcript = Transcript(
            cfg.transcript,
            {"session_id": self.state.session_id, "schedule_ref": self.state.schedule.ref, "config": asdict(cfg)},
        )
        self._lock = asyncio.Lock()
        self._report_ready = asyncio.Event()
        self._finishing = False
        self._conns = 0
        self.done = asyncio.Event()

    async def _send(self, writer, conn: int, peer, msg: dict) -> None:
        self.transcript.log("out", conn, peer, msg)
        writer.write(protocol.encode(msg))
        await writer.drain()

    def _offer(self, implementation: str | None, plat: PlatformState) -> dict:
        sched = self.state.schedule
        body = schedule_to_json(sched)
        form = "matrices"
        if self.cfg.offer_form == "seed" and implementation == IMPLEMENTATION and sched.master_seed is not None:
            body.pop("unitaries")
            form = "seed"
        return {
            "type": "schedule_offer",
            "session_id": self.state.session_id,
            "form": form,
            "schedule_ref": sched.ref,
            "schedule": body,
            "resume_from": plat.next_u,
            "received": len(plat.records),
        }

    async def _register(self, msg: dict, conn: int, writer) -> PlatformState:
        if msg["type"] != "hello":
            raise WireError(ErrorCode.BAD_MESSAGE, "first message must be hello")
        if msg.get("protocol_version") != PROTOCOL_VERSION:
            raise WireError(ErrorCode.BAD_MESSAGE, f"protocol version {msg.get('protocol_version')} not supported")
        pid = msg.get("platform_id")
        if not isinstance(pid, str) or not pid:
            raise WireError(ErrorCode.BAD_MESSAGE, "hello needs a platform_id")
        sid = msg.get("session_id")
        if sid is not None and sid != self.state.session_id:
            raise WireError(ErrorCode.BAD_MESSAGE, f"unknown session {sid}")
        async with self._lock:
            plat = self.state.platforms.get(pid)
            if plat is None:
                if len(self.state.platforms) >= 2:
                    raise WireError(ErrorCode.SESSION_FULL, "session already has two platforms")
                plat = self.state.platforms[pid] = PlatformState(pid)
            elif plat.connected:
                if sid is None:
                    raise WireError(ErrorCode.SESSION_FULL, f"platform {pid} is already connected")
                # a resuming platform supersedes its stale connection
                if plat.writer is not None:
                    plat.writer.close()
            plat.connected, plat.conn, plat.writer = True, conn, writer
        return plat

    async def _finish(self) -> None:
        loop = asyncio.get_running_loop()
        self.state.report = await loop.run_in_executor(
            None, compute_report, self.state, self.cfg.variant, self.cfg.bootstrap
        )
        self._report_ready.set()

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._conns += 1
        conn = self._conns
        plat: PlatformState | None = None
        try:
            while True:
                try:
                    line = await reader.readline()
                except (ConnectionError, asyncio.LimitOverrunError, ValueError):
                    break
                if not line:
                    break
                peer = plat.platform_id if plat else None
                try:
                    msg = protocol.decode(line)
                except WireError:
                    self.transcript.log("in", conn, peer, raw=line.decode(errors="replace"))
                    raise
                self.transcript.log("in", conn, peer if plat else msg.get("platform_id"), msg)
                if plat is None:
                    plat = await self._register(msg, conn, writer)
                    await self._send(writer, conn, plat.platform_id, self._offer(msg.get("implementation"), plat))
                    continue
                kind = msg["type"]
                if kind == "records":
                    async with self._lock:
                        check_records(self.state, plat, msg)
                        ack = protocol.ack(int(msg.get("seq", 0)), plat.next_u, len(plat.records))
                    await self._send(writer, conn, peer, ack)
                elif kind == "complete":
                    async with self._lock:
                        if len(plat.records) != self.state.schedule.n_u:
                            raise WireError(ErrorCode.BAD_MESSAGE, f"complete after {len(plat.records)} records")
                        plat.complete = True
                        start = self.state.ready and not self._finishing
                        self._finishing = self._finishing or start
                    if start:
                        await self._finish()
                    await self._report_ready.wait()
                    report = {"type": "report", "session_id": self.state.session_id, "report": self.state.report.to_dict()}
                    await self._send(writer, conn, peer, report)
                    break
                else:
                    raise WireError(ErrorCode.BAD_MESSAGE, f"unexpected {kind} message")
        except WireError as exc:
            try:
                await self._send(writer, conn, plat.platform_id if plat else None, protocol.error(exc.code, exc.detail))
            except ConnectionError:
                pass
        except ConnectionError:
            pass
        finally:
            if plat is not None and plat.conn == conn:
                plat.connected, plat.writer = False, None
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass
            if self.state.report is not None and not any(p.connected for p in self.state.platforms.values()):
                self.done.set()


def _parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    return host or "127.0.0.1", int(port)


async def _serve(bind: str, cfg: SessionConfig, on_ready=None) -> SessionState:
    verifier = Verifier(cfg)
    host, port = _parse_bind(bind)
    server = await asyncio.start_server(verifier.handle, host, port, limit=protocol.MAX_LINE)
    addr = server.sockets[0].getsockname()
    if on_ready is not None:
        on_ready(f"{addr[0]}:{addr[1]}", verifier.state.session_id)
    try:
        async with server:
            await asyncio.wait_for(verifier.done.wait(), cfg.timeout)
    except asyncio.TimeoutError:
        raise TimeoutError(f"session {verifier.state.session_id} did not finish within {cfg.timeout} s") from None
    finally:
        verifier.transcript.close()
    return verifier.state


def serve(bind: str, cfg: SessionConfig | dict, on_ready=None) -> SessionState:
    """Run one verification session on ``host:port`` until both platforms got their report.

    ``on_ready(address, session_id)`` is called once the socket is bound
    (port 0 picks a free port). Raises ``TimeoutError`` if the session does
    not finish within ``cfg.timeout`` seconds.
    """
    if isinstance(cfg, dict):
        cfg = SessionConfig.from_dict(cfg)
    return asyncio.run(_serve(bind, cfg, on_ready))
