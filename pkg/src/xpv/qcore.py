"""Dense state algebra: pure states, density matrices, partial traces, overlaps.

Basis strings are big-endian: site 0 is the most significant digit of the
basis index, so ``|0101>`` on four qubits is index 5.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from . import randsrc
from .errors import DegenerateInput, InvalidSubsystem, ShapeError

MAX_SITES = 12
HERMITIAN_ATOL = 1e-12
TRACE_ATOL = 1e-12
RHO_MAGIC = b"XPVRHO1"


def _num_sites(dim: int, d: int) -> int:
    n = int(round(np.log(dim) / np.log(d)))
    if d**n != dim:
        raise ShapeError(f"dimension {dim} is not a power of local_dim {d}")
    return n


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray
    num_sites: int
    local_dim: int = 2

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.local_dim**self.num_sites,):
            raise ShapeError(f"expected {self.local_dim ** self.num_sites} amplitudes, got {amps.shape}")
        if abs(np.vdot(amps, amps).real - 1.0) > 1e-12:
            raise ValueError("state is not normalised")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_vector(cls, vec, local_dim: int = 2, normalize: bool = False) -> "PureState":
        vec = np.asarray(vec, dtype=complex)
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls(vec, _num_sites(vec.size, local_dim), local_dim)

    @classmethod
    def basis(cls, digits, local_dim: int = 2) -> "PureState":
        idx = 0
        for s in digits:
            idx = idx * local_dim + int(s)
        vec = np.zeros(local_dim ** len(digits), dtype=complex)
        vec[idx] = 1.0
        return cls(vec, len(digits), local_dim)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def to_density(self) -> "DensityMatrix":
        a = self.amplitudes
        return DensityMatrix(np.outer(a, a.conj()), self.num_sites, self.local_dim)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    num_sites: int
    local_dim: int = 2

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        dim = self.local_dim**self.num_sites
        if m.shape != (dim, dim):
            raise ShapeError(f"expected a {dim}x{dim} matrix, got {m.shape}")
        if self.num_sites > MAX_SITES:
            raise ShapeError(f"at most {MAX_SITES} sites are supported")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > HERMITIAN_ATOL:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(m).real - 1.0) > TRACE_ATOL:
            raise ValueError(f"density matrix has trace {np.trace(m).real!r}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, m, local_dim: int = 2) -> "DensityMatrix":
        m = np.asarray(m, dtype=complex)
        return cls(m, _num_sites(m.shape[0], local_dim), local_dim)

    @classmethod
    def maximally_mixed(cls, num_sites: int, local_dim: int = 2) -> "DensityMatrix":
        dim = local_dim**num_sites
        return cls(np.eye(dim, dtype=complex) / dim, num_sites, local_dim)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def to_bytes(self) -> bytes:
        """Debug dump: magic, d and N as little-endian uint32, then interleaved re/im float64."""
        header = RHO_MAGIC + struct.pack("<II", self.local_dim, self.num_sites)
        return header + np.ascontiguousarray(self.matrix, dtype="<c16").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DensityMatrix":
        if blob[: len(RHO_MAGIC)] != RHO_MAGIC:
            raise ValueError("not a density-matrix dump")
        off = len(RHO_MAGIC)
        d, n = struct.unpack("<II", blob[off : off + 8])
        dim = d**n
        m = np.frombuffer(blob[off + 8 :], dtype="<c16").reshape(dim, dim)
        return cls(m.astype(complex), n, d)


def as_density(state) -> DensityMatrix:
    return state.to_density() if isinstance(state, PureState) else state


# --------------------------------------------------------------------------
# algebra


def partial_trace(rho: DensityMatrix, keep) -> DensityMatrix:
    """Reduced state on the sites in ``keep`` (strictly increasing indices)."""
    keep = [int(k) for k in keep]
    n, d = rho.num_sites, rho.local_dim
    if not keep or any(k < 0 or k >= n for k in keep) or any(b <= a for a, b in zip(keep, keep[1:])):
        raise InvalidSubsystem(f"invalid site list {keep} for {n} sites")
    if len(keep) == n:
        return rho
    t = rho.matrix.reshape((d,) * (2 * n))
    rows = list(range(n))
    cols = [n + i if i in keep else i for i in range(n)]
    out = keep + [n + i for i in keep]
    dk = d ** len(keep)
    m = np.einsum(t, rows + cols, out).reshape(dk, dk)
    return DensityMatrix((m + m.conj().T) / 2, len(keep), d)


def purity(rho: DensityMatrix) -> float:
    m = rho.matrix
    return float(np.vdot(m, m).real)


def overlap(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    """Tr(rho1 rho2)."""
    if rho1.matrix.shape != rho2.matrix.shape or rho1.local_dim != rho2.local_dim:
        raise ShapeError("density matrices have different dimensions")
    # Tr(AB) = sum_ij A_ij B_ji = <A^dag, B> for Hermitian A
    return float(np.vdot(rho1.matrix, rho2.matrix).real)


def _purities(rho1, rho2):
    overlap_12 = overlap(rho1, rho2)
    p1, p2 = purity(rho1), purity(rho2)
    if p1 <= 0 or p2 <= 0:
        raise DegenerateInput("purity must be positive")
    return overlap_12, p1, p2


def fidelity_max(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    o, p1, p2 = _purities(rho1, rho2)
    return o / max(p1, p2)


def fidelity_gm(rho1: DensityMatrix, rho2: DensityMatrix) -> float:
    o, p1, p2 = _purities(rho1, rho2)
    return o / np.sqrt(p1 * p2)


def swap_operator(d: int) -> np.ndarray:
    """sum |s><s'| ⊗ |s'><s| on C^d ⊗ C^d."""
    out = np.zeros((d * d, d * d))
    for a in range(d):
        for b in range(d):
            out[a * d + b, b * d + a] = 1.0
    return out


def dephase(rho: DensityMatrix, lam: float) -> DensityMatrix:
    """Global dephasing lam * rho + (1 - lam) * I / D."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    eye = np.eye(rho.dim) / rho.dim
    return DensityMatrix(lam * rho.matrix + (1.0 - lam) * eye, rho.num_sites, rho.local_dim)


# --------------------------------------------------------------------------
# state construction


class StateKind(str, enum.Enum):
    PURE_PRODUCT = "pure_product"
    PURE_HAAR_RANDOM = "pure_haar_random"
    MIXED_RANDOM = "mixed_random"
    NEEL = "neel"
    MAXIMALLY_MIXED = "maximally_mixed"
    DEPHASED_MIXTURE = "dephased_mixture"

    @classmethod
    def _missing_(cls, value):
        aliases = {"pp": "pure_product", "pr": "pure_haar_random", "mr": "mixed_random", "mm": "maximally_mixed"}
        if isinstance(value, str) and value.lower() in aliases:
            return cls(aliases[value.lower()])
        return None


@dataclass(frozen=True)
class StateSpec:
    kind: StateKind
    num_sites: int
    seed: int = 0
    traced_sites: int = 3
    lam: float = 1.0
    local_dim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", StateKind(self.kind))
        if self.kind is StateKind.MIXED_RANDOM and self.traced_sites < 1:
            raise ValueError("MixedRandom needs traced_sites >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @classmethod
    def parse(cls, text: str) -> "StateSpec":
        """Parse ``kind:N[:key=value,...]``, e.g. ``mixed_random:5:traced_sites=3,seed=7``."""
        parts = text.split(":")
        kwargs = {}
        if len(parts) > 2:
            for item in parts[2].split(","):
                key, val = item.split("=")
                kwargs[key] = float(val) if key == "lam" else int(val)
        return cls(StateKind(parts[0].lower()), int(parts[1]), **kwargs)


def _random_product(n: int, d: int, seed: int) -> np.ndarray:
    vec = np.ones(1, dtype=complex)
    for k in range(n):
        u = randsrc.sample_cue(d, randsrc.stream(seed, randsrc.TAG_STATE, 0, k))
        vec = np.kron(vec, u[:, 0])
    return vec


def _haar_pure(n: int, d: int, seed: int) -> np.ndarray:
    # U|0...0> for Haar U is the first column of U, which is distributed as a
    # normalised complex Gaussian vector; draw that directly (O(D) not O(D^3))
    rng = randsrc.stream(seed, randsrc.TAG_STATE, 1)
    vec = rng.standard_normal(d**n) + 1j * rng.standard_normal(d**n)
    return vec / np.linalg.norm(vec)


def build_pure(spec: StateSpec) -> PureState:
    n, d = spec.num_sites, spec.local_dim
    if spec.kind is StateKind.PURE_PRODUCT:
        vec = _random_product(n, d, spec.seed)
    elif spec.kind is StateKind.PURE_HAAR_RANDOM:
        vec = _haar_pure(n, d, spec.seed)
    elif spec.kind is StateKind.NEEL:
        return PureState.basis([k % 2 for k in range(n)], d)
    else:
        raise ValueError(f"{spec.kind.value} is not a pure state")
    return PureState(vec / np.linalg.norm(vec), n, d)


def build_state(spec: StateSpec) -> DensityMatrix:
    n, d = spec.num_sites, spec.local_dim
    if spec.kind is StateKind.MAXIMALLY_MIXED:
        return DensityMatrix.maximally_mixed(n, d)
    if spec.kind is StateKind.MIXED_RANDOM:
        big = _haar_pure(n + spec.traced_sites, d, spec.seed)
        # trace out the last traced_sites sites: rho = M M^dag with M = reshape
        m = big.reshape(d**n, d**spec.traced_sites)
        rho = m @ m.conj().T
        return DensityMatrix((rho + rho.conj().T) / 2, n, d)
    if spec.kind is StateKind.DEPHASED_MIXTURE:
        base = build_pure(StateSpec(StateKind.PURE_PRODUCT, n, spec.seed, local_dim=d))
        return dephase(base.to_density(), spec.lam)
    return build_pure(spec).to_density()
