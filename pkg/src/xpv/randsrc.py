"""Random unitaries, GUE matrices and counter-based seed derivation.

Every random object is drawn from a stream derived from ``(master_seed, tag,
*indices)`` through :class:`numpy.random.SeedSequence` spawn keys, so the value
for unitary ``u`` on site ``k`` never depends on the order of generation.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .errors import ModeError, ShapeError

# stream domain tags; keep them distinct so shots never reuse unitary streams
TAG_SCHEDULE = 0
TAG_SHOTS = 1
TAG_NOISE = 2
TAG_STATE = 3
TAG_BOOTSTRAP = 4
TAG_HARNESS = 5


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the counter ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


class Mode(str, enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


class Ensemble(str, enum.Enum):
    HAAR_CUE = "haar_cue"
    CLIFFORD_1Q = "clifford_1q"


# --------------------------------------------------------------------------
# single draws


def _ginibre(d: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return z / np.sqrt(2.0)


def _haar_from_ginibre(z: np.ndarray) -> np.ndarray:
    """QR with the phases of diag(R) moved into Q; works on stacked matrices."""
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    phases = diag / np.abs(diag)
    return q * phases[..., None, :]


def sample_cue(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed ``d x d`` unitary."""
    if d < 2:
        raise ValueError("d must be >= 2")
    return _haar_from_ginibre(_ginibre(d, rng))


def sample_gue(d: int, rng: np.random.Generator) -> np.ndarray:
    """Hermitian matrix normalised so that E[h_ab h_cd] = delta_ad delta_bc.

    Diagonal entries are N(0, 1); off-diagonal real and imaginary parts are
    N(0, 1/2) each.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return (a + a.conj().T) / 2.0


@lru_cache(maxsize=None)
def _clifford_group() -> np.ndarray:
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    s = np.array([[1, 0], [0, 1j]], dtype=complex)

    def canon(m):
        # fix global phase: first entry of largest modulus made real positive
        flat = m.ravel()
        idx = np.argmax(np.abs(flat) > 1e-9)
        m = m * (abs(flat[idx]) / flat[idx])
        return m, tuple(np.round(m.ravel(), 9).view(float))

    eye, key = canon(np.eye(2, dtype=complex))
    found = {key: eye}
    frontier = [eye]
    while frontier:
        nxt = []
        for m in frontier:
            for g in (h, s):
                c, k = canon(g @ m)
                if k not in found:
                    found[k] = c
                    nxt.append(c)
        frontier = nxt
    group = np.array(list(found.values()))
    group.setflags(write=False)
    return group


def enumerate_clifford_1q() -> np.ndarray:
    """The 24 single-qubit Cliffords (one representative per phase class).

    Returned as a read-only array of shape ``(24, 2, 2)``; index 0 is the
    identity.
    """
    return _clifford_group()


def twirl_two_copy(op: np.ndarray, unitaries) -> np.ndarray:
    """Ensemble average of (U ⊗ U)^dag op (U ⊗ U) over the given unitaries."""
    out = np.zeros_like(op, dtype=complex)
    for u in unitaries:
        uu = np.kron(u, u)
        out += uu.conj().T @ op @ uu
    return out / len(unitaries)


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class LocalUnitary:
    """Tensor product of single-site unitaries, ``factors[k]`` acts on site k."""

    factors: np.ndarray  # (N, d, d)

    @property
    def num_sites(self) -> int:
        return self.factors.shape[0]

    def full(self) -> np.ndarray:
        out = np.ones((1, 1), dtype=complex)
        for f in self.factors:
            out = np.kron(out, f)
        return out


@dataclass(frozen=True)
class SchedulePlan:
    n_u: int
    n_sites: int
    local_dim: int = 2
    mode: Mode = Mode.LOCAL
    ensemble: Ensemble = Ensemble.HAAR_CUE
    master_seed: int = 0


@dataclass(frozen=True, eq=False)
class UnitarySchedule:
    """Shared list of random unitaries.

    ``matrices`` has shape ``(N_U, N, d, d)`` in local mode and
    ``(N_U, D, D)`` in global mode.
    """

    matrices: np.ndarray
    n_sites: int
    local_dim: int
    mode: Mode
    ensemble: Ensemble
    master_seed: int | None = None

    def __post_init__(self):
        m = self.matrices
        dim = self.local_dim**self.n_sites
        if self.mode is Mode.LOCAL:
            ok = m.ndim == 4 and m.shape[1:] == (self.n_sites, self.local_dim, self.local_dim)
        else:
            ok = m.ndim == 3 and m.shape[1:] == (dim, dim)
        if not ok:
            raise ShapeError(f"schedule matrices have shape {m.shape}")
        m.setflags(write=False)

    def __len__(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_u(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.local_dim**self.n_sites

    def __getitem__(self, u: int):
        if self.mode is Mode.LOCAL:
            return LocalUnitary(self.matrices[u])
        return self.matrices[u]

    @cached_property
    def ref(self) -> str:
        """SHA-256 over the mode, dimensions and the little-endian matrix data."""
        h = hashlib.sha256()
        h.update(f"{self.mode.value}|{self.n_sites}|{self.local_dim}|{self.n_u}|".encode())
        h.update(np.ascontiguousarray(self.matrices, dtype="<c16").tobytes())
        return h.hexdigest()

    def subset(self, indices) -> "UnitarySchedule":
        """Schedule made of the given unitary indices (used for truncation)."""
        return UnitarySchedule(
            np.array(self.matrices[np.asarray(indices)]),
            self.n_sites,
            self.local_dim,
            self.mode,
            self.ensemble,
            None,
        )

    def restrict(self, sites) -> "UnitarySchedule":
        """Local schedule acting only on ``sites`` (still a product of 2-design factors)."""
        if self.mode is not Mode.LOCAL:
            raise ModeError("only local schedules can be restricted to subsystems")
        sites = list(sites)
        return UnitarySchedule(
            np.array(self.matrices[:, sites]), len(sites), self.local_dim, self.mode, self.ensemble, None
        )

    def full_matrices(self) -> np.ndarray:
        """All unitaries as dense ``D x D`` matrices, shape ``(N_U, D, D)``."""
        if self.mode is Mode.GLOBAL:
            return self.matrices
        return np.array([self[u].full() for u in range(self.n_u)])


def _draw_factor(plan: SchedulePlan, u: int, k: int) -> np.ndarray:
    rng = stream(plan.master_seed, TAG_SCHEDULE, u, k)
    if plan.ensemble is Ensemble.CLIFFORD_1Q:
        if plan.local_dim != 2:
            raise ValueError("Clifford ensemble is defined for qubits only")
        return enumerate_clifford_1q()[rng.integers(24)]
    d = plan.local_dim if plan.mode is Mode.LOCAL else plan.local_dim**plan.n_sites
    return _ginibre(d, rng)


def sample_schedule(plan: SchedulePlan) -> UnitarySchedule:
    if plan.n_u < 1:
        raise ValueError("n_u must be >= 1")
    mode, ens = Mode(plan.mode), Ensemble(plan.ensemble)
    plan = SchedulePlan(plan.n_u, plan.n_sites, plan.local_dim, mode, ens, plan.master_seed)
    if mode is Mode.GLOBAL:
        if ens is Ensemble.CLIFFORD_1Q:
            raise ModeError("the Clifford ensemble is single-site only")
        raw = np.array([_draw_factor(plan, u, 0) for u in range(plan.n_u)])
    else:
        raw = np.array(
            [[_draw_factor(plan, u, k) for k in range(plan.n_sites)] for u in range(plan.n_u)]
        )
    mats = raw if ens is Ensemble.CLIFFORD_1Q else _haar_from_ginibre(raw)
    return UnitarySchedule(np.array(mats), plan.n_sites, plan.local_dim, mode, ens, plan.master_seed)


def clifford_product_schedule(n_sites: int) -> UnitarySchedule:
    """Exhaustive (Clifford)^{⊗N}: all 24**N local unitaries, an exact 2-design."""
    group = enumerate_clifford_1q()
    mats = np.array([group[list(idx)] for idx in itertools.product(range(24), repeat=n_sites)])
    return UnitarySchedule(mats, n_sites, 2, Mode.LOCAL, Ensemble.CLIFFORD_1Q, None)


# --------------------------------------------------------------------------
# wire form


def _matrix_to_pairs(m: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in np.asarray(m).ravel()]


def _pairs_to_matrix(pairs, dim: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=float)
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(dim, dim)


def unitary_to_json(schedule: UnitarySchedule, u: int) -> dict:
    if schedule.mode is Mode.LOCAL:
        factors = [_matrix_to_pairs(f) for f in schedule.matrices[u]]
    else:
        factors = [_matrix_to_pairs(schedule.matrices[u])]
    return {"u": int(u), "factors": factors}


def schedule_to_json(schedule: UnitarySchedule) -> dict:
    return {
        "mode": schedule.mode.value,
        "ensemble": schedule.ensemble.value,
        "N": schedule.n_sites,
        "d": schedule.local_dim,
        "N_U": schedule.n_u,
        "master_seed": schedule.master_seed,
        "ref": schedule.ref,
        "unitaries": [unitary_to_json(schedule, u) for u in range(schedule.n_u)],
    }


def schedule_from_json(obj: dict) -> UnitarySchedule:
    """Inverse of :func:`schedule_to_json`; also accepts the seed-only form."""
    mode = Mode(obj["mode"])
    ens = Ensemble(obj["ensemble"])
    n, d = int(obj["N"]), int(obj["d"])
    if "unitaries" not in obj:
        return sample_schedule(SchedulePlan(int(obj["N_U"]), n, d, mode, ens, int(obj["master_seed"])))
    entries = sorted(obj["unitaries"], key=lambda e: e["u"])
    if mode is Mode.LOCAL:
        mats = np.array([[_pairs_to_matrix(f, d) for f in e["factors"]] for e in entries])
    else:
        mats = np.array([_pairs_to_matrix(e["factors"][0], d**n) for e in entries])
    return UnitarySchedule(mats, n, d, mode, ens, obj.get("master_seed"))
