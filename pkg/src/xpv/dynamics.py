"""Exact quench dynamics of the long-range XY chain.

H = sum_{i<j} J_ij (s+_i s-_j + s-_i s+_j) + B sum_i Z_i + sum_i delta_i Z_i,
with J_ij = j0 / |i - j|^alpha, hbar = 1 and times in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import randsrc
from .qcore import MAX_SITES, DensityMatrix, PureState

J0_DEFAULT = 420.0  # 1/s
ALPHA_DEFAULT = 1.24

_SP = np.array([[0.0, 1.0], [0.0, 0.0]])  # |0><1|, raises Z from -1 to +1


def _site_op(op: np.ndarray, k: int, n: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(2**k), op), np.eye(2 ** (n - k - 1)))


@dataclass(frozen=True)
class XYModel:
    n_sites: int
    j0: float = J0_DEFAULT
    alpha: float = ALPHA_DEFAULT
    b_field: float = 0.0
    disorder: tuple | None = None
    disorder_bound: float | None = None

    def __post_init__(self):
        if not 1 <= self.n_sites <= MAX_SITES:
            raise ValueError(f"n_sites must be in [1, {MAX_SITES}]")
        if self.disorder is not None:
            object.__setattr__(self, "disorder", tuple(float(x) for x in self.disorder))
            if len(self.disorder) != self.n_sites:
                raise ValueError("need one disorder value per site")
            if self.disorder_bound is not None and max(abs(x) for x in self.disorder) > self.disorder_bound:
                raise ValueError("disorder exceeds its bound")

    @classmethod
    def with_random_disorder(cls, n_sites: int, bound: float, seed: int, **kw) -> "XYModel":
        """Disorder drawn uniformly from [-bound, bound], one value per site."""
        rng = randsrc.stream(seed, randsrc.TAG_STATE, 7)
        delta = rng.uniform(-bound, bound, size=n_sites)
        return cls(n_sites, disorder=tuple(delta), disorder_bound=bound, **kw)

    @classmethod
    def from_config(cls, cfg: dict) -> "XYModel":
        kw = dict(
            j0=float(cfg.get("j0", J0_DEFAULT)),
            alpha=float(cfg.get("alpha", ALPHA_DEFAULT)),
            b_field=float(cfg.get("b", 0.0)),
        )
        n = int(cfg["n"])
        bound = cfg.get("disorder_bound")
        if bound:
            return cls.with_random_disorder(n, float(bound), int(cfg.get("disorder_seed", 0)), **kw)
        return cls(n, **kw)

    @property
    def couplings(self) -> np.ndarray:
        i = np.arange(self.n_sites)
        dist = np.abs(i[:, None] - i[None, :]).astype(float)
        with np.errstate(divide="ignore"):
            j = np.where(dist > 0, self.j0 / dist**self.alpha, 0.0)
        return j


def build_hamiltonian(model: XYModel) -> np.ndarray:
    n = model.n_sites
    dim = 2**n
    h = np.zeros((dim, dim))
    jmat = model.couplings
    sp = [_site_op(_SP, k, n) for k in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            hop = sp[i] @ sp[j].T
            h += jmat[i, j] * (hop + hop.T)
    fields = np.full(n, model.b_field)
    if model.disorder is not None:
        fields = fields + np.asarray(model.disorder)
    # Z_k is diagonal: +1 for digit 0, -1 for digit 1 at site k
    idx = np.arange(dim)
    zdiag = np.zeros(dim)
    for k in range(n):
        bit = (idx >> (n - 1 - k)) & 1
        zdiag += fields[k] * (1 - 2 * bit)
    h[idx, idx] += zdiag
    return h


def total_magnetization(n_sites: int) -> np.ndarray:
    """Diagonal of sum_k Z_k."""
    idx = np.arange(2**n_sites)
    return sum(1 - 2 * ((idx >> (n_sites - 1 - k)) & 1) for k in range(n_sites)).astype(float)


@dataclass(frozen=True, eq=False)
class Propagator:
    """Eigendecomposition of H, reused for any number of evolution times."""

    model: XYModel
    hamiltonian: np.ndarray = field(repr=False)

    @cached_property
    def _eig(self):
        return np.linalg.eigh(self.hamiltonian)

    def evolve(self, psi: PureState, t: float) -> PureState:
        w, v = self._eig
        coeff = v.conj().T @ psi.amplitudes
        out = v @ (np.exp(-1j * w * t) * coeff)
        return PureState(out, psi.num_sites, psi.local_dim)


def propagator(model: XYModel) -> Propagator:
    return Propagator(model, build_hamiltonian(model))


def evolve(model: XYModel, initial: PureState, t: float) -> PureState:
    """exp(-iHt)|psi> by exact diagonalisation; negative t runs backwards."""
    return propagator(model).evolve(initial, t)


def neel_state(n_sites: int) -> PureState:
    return PureState.basis([k % 2 for k in range(n_sites)])


@dataclass(frozen=True)
class QuenchResult:
    times: tuple
    states: tuple

    def densities(self) -> list[DensityMatrix]:
        return [s.to_density() if isinstance(s, PureState) else s for s in self.states]


def quench_series(model: XYModel, times, initial: PureState | None = None) -> QuenchResult:
    """Néel-state quench evaluated at every time with one shared diagonalisation."""
    prop = propagator(model)
    psi0 = initial or neel_state(model.n_sites)
    times = tuple(float(t) for t in times)
    return QuenchResult(times, tuple(prop.evolve(psi0, t) for t in times))
