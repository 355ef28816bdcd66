"""Randomized-measurement simulation and the measurement-dataset format.

A platform rotates its state with every unitary of a shared schedule and
either records exact Born probabilities (the theory side) or samples a
finite number of computational-basis outcomes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from . import randsrc
from .errors import InvalidSubsystem, ShapeError
from .qcore import DensityMatrix, PureState
from .randsrc import LocalUnitary, Mode, UnitarySchedule

# chunk so a batch of rotated density matrices stays below ~64 MB
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    probs: np.ndarray
    unitary_index: int | None = None

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.min(initial=0.0) < -1e-12 or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("not a probability vector")
        object.__setattr__(self, "probs", p)


@dataclass(frozen=True, eq=False)
class OutcomeRecord:
    """Histogram of measured basis strings for one unitary.

    ``outcomes`` holds the distinct basis indices that were observed (sorted)
    and ``counts`` the matching multiplicities.
    """

    unitary_index: int
    outcomes: np.ndarray
    counts: np.ndarray
    shots: int

    def __post_init__(self):
        if self.shots < 1 or int(np.sum(self.counts)) != self.shots:
            raise ValueError("counts must sum to shots >= 1")

    @classmethod
    def from_dense(cls, u: int, dense_counts: np.ndarray) -> "OutcomeRecord":
        nz = np.flatnonzero(dense_counts)
        return cls(int(u), nz, np.asarray(dense_counts[nz], dtype=np.int64), int(dense_counts.sum()))

    @classmethod
    def from_map(cls, u: int, counts: dict) -> "OutcomeRecord":
        items = sorted((int(k), int(v)) for k, v in counts.items() if int(v) > 0)
        outs = np.array([k for k, _ in items], dtype=np.int64)
        cnts = np.array([v for _, v in items], dtype=np.int64)
        return cls(int(u), outs, cnts, int(cnts.sum()))

    @property
    def counts_map(self) -> dict[int, int]:
        return {int(s): int(c) for s, c in zip(self.outcomes, self.counts)}


@dataclass(frozen=True, eq=False)
class MeasurementDataset:
    """All records of one platform for one schedule.

    ``data`` is an ``(N_U, D)`` array: integer counts, or exact probabilities
    when ``exact`` is true. Row ``u`` belongs to unitary ``u``.
    """

    platform_id: str
    schedule_ref: str
    n_sites: int
    local_dim: int
    data: np.ndarray
    exact: bool = False
    mode: str = "local"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[1] != self.local_dim**self.n_sites:
            raise ShapeError(f"dataset array has shape {arr.shape}")
        arr = arr.astype(float if self.exact else np.int64, copy=False)
        if not self.exact and np.any(arr.sum(axis=1) < 1):
            raise ValueError("every unitary needs at least one shot")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n_u(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @cached_property
    def shots(self) -> np.ndarray:
        """Shots per unitary (zeros in exact mode)."""
        if self.exact:
            return np.zeros(self.n_u, dtype=np.int64)
        return self.data.sum(axis=1)

    @property
    def records(self) -> list:
        if self.exact:
            return [OutcomeDistribution(row, u) for u, row in enumerate(self.data)]
        return [OutcomeRecord.from_dense(u, row) for u, row in enumerate(self.data)]

    def frequencies(self) -> np.ndarray:
        if self.exact:
            return np.asarray(self.data)
        return self.data / self.shots[:, None]


# --------------------------------------------------------------------------
# Born probabilities


def _apply_local(x: np.ndarray, factors: np.ndarray, d: int) -> np.ndarray:
    """Apply per-batch local unitaries ``factors`` (B, N, d, d) to ``x`` (B, D, R) on axis 1."""
    b, dim, r = x.shape
    n = factors.shape[1]
    for k in range(n):
        left = d**k
        y = x.reshape(b, left, d, (dim // (left * d)) * r)
        x = np.einsum("uab,ulbr->ular", factors[:, k], y).reshape(b, dim, r)
    return x


def _probs_pure_local(psi: np.ndarray, mats: np.ndarray, d: int) -> np.ndarray:
    x = np.broadcast_to(psi[None, :, None], (mats.shape[0], psi.size, 1))
    y = _apply_local(np.ascontiguousarray(x), mats, d)[:, :, 0]
    return y.real**2 + y.imag**2


def _factor(rho: np.ndarray) -> np.ndarray:
    """``V`` with ``rho = V V^dag``, dropping numerically empty eigenvectors."""
    w, v = np.linalg.eigh(rho)
    keep = w > max(w.max(), 0.0) * 1e-14
    return v[:, keep] * np.sqrt(w[keep])


def _probs_density_local(rho: np.ndarray, mats: np.ndarray, d: int) -> np.ndarray:
    # diag(U rho U^dag) = sum_r |U v_r|^2 for rho = sum_r v_r v_r^dag
    vf = _factor(rho)
    dim, rank = vf.shape
    chunk = max(1, _CHUNK_ELEMENTS // (dim * rank))
    out = np.empty((mats.shape[0], dim))
    for start in range(0, mats.shape[0], chunk):
        m = mats[start : start + chunk]
        x = _apply_local(np.ascontiguousarray(np.broadcast_to(vf, (m.shape[0], dim, rank))), m, d)
        out[start : start + chunk] = (x.real**2 + x.imag**2).sum(axis=2)
    return out


def _probs_global(state, mats: np.ndarray) -> np.ndarray:
    if isinstance(state, PureState):
        y = mats @ state.amplitudes
        return y.real**2 + y.imag**2
    rho = state.matrix
    return np.einsum("usa,ab,usb->us", mats, rho, mats.conj()).real


def _clean(probs: np.ndarray) -> np.ndarray:
    probs = np.clip(probs, 0.0, None)
    return probs / probs.sum(axis=-1, keepdims=True)


def born_probabilities(state, unitary) -> OutcomeDistribution:
    """Outcome distribution of ``state`` after rotation by a local or global unitary."""
    if isinstance(unitary, LocalUnitary):
        mats = unitary.factors[None]
        if mats.shape[1] != state.num_sites or mats.shape[2] != state.local_dim:
            raise ShapeError("unitary and state act on different spaces")
        probs = _batch_local(state, mats)[0]
    else:
        u = np.asarray(unitary)
        if u.shape != (state.local_dim**state.num_sites,) * 2:
            raise ShapeError("unitary and state act on different spaces")
        probs = _probs_global(state, u[None])[0]
    return OutcomeDistribution(_clean(probs))


def _batch_local(state, mats):
    d = state.local_dim
    if isinstance(state, PureState):
        return _probs_pure_local(state.amplitudes, mats, d)
    return _probs_density_local(state.matrix, mats, d)


def born_probabilities_batch(state, schedule: UnitarySchedule) -> np.ndarray:
    """Exact probabilities for every unitary of the schedule, shape ``(N_U, D)``."""
    if state.num_sites != schedule.n_sites or state.local_dim != schedule.local_dim:
        raise ShapeError("schedule and state act on different spaces")
    if schedule.mode is Mode.LOCAL:
        probs = _batch_local(state, schedule.matrices)
    else:
        probs = _probs_global(state, schedule.matrices)
    return _clean(probs)


# --------------------------------------------------------------------------
# sampling


def sample_counts(dist: OutcomeDistribution, shots: int, rng: np.random.Generator, unitary_index: int = 0):
    """Multinomial draw by inverse CDF, one uniform per shot."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    cdf = np.cumsum(dist.probs)
    idx = np.searchsorted(cdf, rng.random(shots) * cdf[-1], side="right")
    idx = np.minimum(idx, cdf.size - 1)
    return OutcomeRecord.from_dense(unitary_index, np.bincount(idx, minlength=cdf.size))


def sample_counts_batch(
    probs: np.ndarray, shots: int, seed: int, platform: int = 0, first_unitary: int = 0, batch: int = 0
) -> np.ndarray:
    """Dense ``(N_U, D)`` count matrix.

    Row ``u`` draws from stream ``(seed, shots-tag, platform, first_unitary + u)``;
    a nonzero ``batch`` selects an independent follow-up batch of shots.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    n_u, dim = probs.shape
    cdf = np.cumsum(probs, axis=1)
    cdf /= cdf[:, -1:]
    draws = np.empty((n_u, shots))
    for u in range(n_u):
        key = (platform, first_unitary + u) + ((batch,) if batch else ())
        draws[u] = randsrc.stream(seed, randsrc.TAG_SHOTS, *key).random(shots)
    idx = np.empty((n_u, shots), dtype=np.int64)
    for u in range(n_u):
        idx[u] = np.searchsorted(cdf[u], draws[u], side="right")
    np.minimum(idx, dim - 1, out=idx)
    flat = idx + (np.arange(n_u) * dim)[:, None]
    return np.bincount(flat.ravel(), minlength=n_u * dim).reshape(n_u, dim)


def acquire_dataset(
    state,
    schedule: UnitarySchedule,
    shots: int | None,
    seed: int = 0,
    platform_id: str = "platform",
    platform: int = 0,
    probs: np.ndarray | None = None,
) -> MeasurementDataset:
    """Measure ``state`` with every unitary of ``schedule``.

    ``shots=None`` stores the exact probabilities (theory side). ``probs`` may
    be passed to skip recomputing them.
    """
    if probs is None:
        probs = born_probabilities_batch(state, schedule)
    if shots is None:
        data, exact = probs, True
    else:
        data, exact = sample_counts_batch(probs, shots, seed, platform), False
    return MeasurementDataset(
        platform_id, schedule.ref, schedule.n_sites, schedule.local_dim, data, exact, schedule.mode.value
    )


# --------------------------------------------------------------------------
# dataset transformations


def _derived_ref(ref: str, tag: str) -> str:
    return hashlib.sha256(f"{ref}|{tag}".encode()).hexdigest()


def marginalize(ds: MeasurementDataset, keep) -> MeasurementDataset:
    """Counts (or probabilities) on the sites in ``keep``, summing out the rest."""
    keep = [int(k) for k in keep]
    n, d = ds.n_sites, ds.local_dim
    if not keep or any(k < 0 or k >= n for k in keep) or any(b <= a for a, b in zip(keep, keep[1:])):
        raise InvalidSubsystem(f"invalid site list {keep}")
    if len(keep) == n:
        return ds
    t = ds.data.reshape((ds.n_u,) + (d,) * n)
    drop = tuple(1 + k for k in range(n) if k not in keep)
    reduced = t.sum(axis=drop).reshape(ds.n_u, d ** len(keep))
    return MeasurementDataset(
        ds.platform_id,
        _derived_ref(ds.schedule_ref, f"sites={keep}"),
        len(keep),
        d,
        reduced,
        ds.exact,
        ds.mode,
        dict(ds.meta),
    )


def truncate_unitaries(ds: MeasurementDataset, n_u: int) -> MeasurementDataset:
    """Keep the first ``n_u`` unitaries."""
    if not 1 <= n_u <= ds.n_u:
        raise ValueError("n_u out of range")
    if n_u == ds.n_u:
        return ds
    return replace(ds, schedule_ref=_derived_ref(ds.schedule_ref, f"first={n_u}"), data=ds.data[:n_u])


def subsample_shots(ds: MeasurementDataset, shots: int, seed: int) -> MeasurementDataset:
    """Keep ``shots`` outcomes per unitary, drawn without replacement."""
    if ds.exact:
        return ds
    rng = randsrc.stream(seed, randsrc.TAG_SHOTS, 99)
    rows = [rng.multivariate_hypergeometric(row, shots) for row in ds.data]
    return replace(ds, data=np.array(rows))


def split_shots(ds: MeasurementDataset, seed: int):
    """Divide every unitary's outcomes into two halves (self-verification)."""
    if ds.exact:
        raise ValueError("exact datasets cannot be split")
    rng = randsrc.stream(seed, randsrc.TAG_SHOTS, 98)
    first = np.array([rng.multivariate_hypergeometric(row, int(row.sum()) // 2) for row in ds.data])
    second = ds.data - first
    return (
        replace(ds, platform_id=ds.platform_id + "/1", data=first),
        replace(ds, platform_id=ds.platform_id + "/2", data=second),
    )


# --------------------------------------------------------------------------
# NDJSON file format


def dataset_header(ds: MeasurementDataset) -> dict:
    return {
        "platform_id": ds.platform_id,
        "schedule_ref": ds.schedule_ref,
        "N": ds.n_sites,
        "d": ds.local_dim,
        "N_U": ds.n_u,
        "exact": ds.exact,
        "mode": ds.mode,
    }


def record_to_json(ds: MeasurementDataset, u: int) -> dict:
    row = ds.data[u]
    if ds.exact:
        return {"u": int(u), "probs": [float(p) for p in row]}
    nz = np.flatnonzero(row)
    return {"u": int(u), "counts": {str(int(s)): int(row[s]) for s in nz}, "shots": int(row.sum())}


def dataset_lines(ds: MeasurementDataset):
    yield dataset_header(ds)
    for u in range(ds.n_u):
        yield record_to_json(ds, u)


def dataset_from_parts(header: dict, records) -> MeasurementDataset:
    """Rebuild a dataset from a header and record dicts (any order, no duplicates)."""
    n, d, n_u = int(header["N"]), int(header["d"]), int(header["N_U"])
    exact = bool(header["exact"])
    dim = d**n
    data = np.zeros((n_u, dim), dtype=float if exact else np.int64)
    seen = set()
    for rec in records:
        u = int(rec["u"])
        if u in seen or not 0 <= u < n_u:
            raise ValueError(f"duplicate or out-of-range unitary index {u}")
        seen.add(u)
        if exact:
            data[u] = np.asarray(rec["probs"], dtype=float)
        else:
            for s, c in rec["counts"].items():
                data[u, int(s)] = int(c)
            if int(data[u].sum()) != int(rec["shots"]):
                raise ValueError(f"record {u}: counts do not sum to shots")
    if len(seen) != n_u:
        raise ValueError("records do not cover every unitary index")
    return MeasurementDataset(
        str(header["platform_id"]), str(header["schedule_ref"]), n, d, data, exact, header.get("mode", "local")
    )


def write_dataset(ds: MeasurementDataset, path) -> None:
    with open(Path(path), "w") as fh:
        for obj in dataset_lines(ds):
            fh.write(json.dumps(obj) + "\n")


def read_dataset(path) -> MeasurementDataset:
    with open(Path(path)) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    return dataset_from_parts(lines[0], lines[1:])
