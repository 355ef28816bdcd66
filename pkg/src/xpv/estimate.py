"""Overlap, purity and fidelity estimators from randomized-measurement data.

For every shared unitary the two outcome distributions are contracted with
the Hamming kernel ``w(s, s') = d^N (-d)^(-D[s, s'])`` (local unitaries) or
``D (-D)^(-D_G[s, s'])`` (global unitaries); the ensemble average of that
correlator is ``Tr(rho_i rho_j)``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ModeError, ProtocolError, ShapeError
from .measure import MeasurementDataset, OutcomeDistribution, OutcomeRecord, marginalize


class Variant(str, enum.Enum):
    PLUGIN = "plugin"
    USTAT = "ustat"


@dataclass(frozen=True)
class HammingKernel:
    mode: str
    local_dim: int
    n_sites: int

    def __post_init__(self):
        if self.mode not in ("local", "global"):
            raise ModeError(f"unknown kernel mode {self.mode!r}")

    @classmethod
    def for_dataset(cls, ds: MeasurementDataset, mode: str | None = None) -> "HammingKernel":
        return cls(mode or ds.mode, ds.local_dim, ds.n_sites)

    @property
    def dim(self) -> int:
        return self.local_dim**self.n_sites

    @property
    def diagonal(self) -> float:
        """Weight of the s = s' pair, the same for both modes."""
        return float(self.dim)

    def weight(self, s: int, t: int) -> float:
        d, n = self.local_dim, self.n_sites
        if self.mode == "global":
            return float(self.dim) if s == t else -1.0
        dist = sum(a != b for a, b in zip(digits(s, d, n), digits(t, d, n)))
        return d**n * (-d) ** (-dist)

    def matrix(self) -> np.ndarray:
        """Dense ``D x D`` kernel; only for tests and tiny systems."""
        if self.mode == "global":
            return (self.dim + 1) * np.eye(self.dim) - 1.0
        site = self.local_dim * np.eye(self.local_dim) - (1.0 - np.eye(self.local_dim))
        out = np.ones((1, 1))
        for _ in range(self.n_sites):
            out = np.kron(out, site)
        return out

    def apply(self, p: np.ndarray) -> np.ndarray:
        """``K @ p`` for every row of ``p`` (shape (B, D)) in O(B * D * N)."""
        p = np.asarray(p, dtype=float)
        b, dim = p.shape
        if dim != self.dim:
            raise ShapeError(f"expected rows of length {self.dim}, got {dim}")
        if self.mode == "global":
            return (dim + 1) * p - p.sum(axis=1, keepdims=True)
        d = self.local_dim
        # site kernel d*I - (J - I) = (d + 1) I - J, applied axis by axis
        x = p
        for k in range(self.n_sites):
            y = x.reshape(b, d**k, d, dim // d ** (k + 1))
            x = ((d + 1) * y - y.sum(axis=2, keepdims=True)).reshape(b, dim)
        return x


def site_operator(d: int) -> np.ndarray:
    """Two-copy single-site operator d * sum (-d)^(-D[s, s']) |s><s| ⊗ |s'><s'|, as a d^2 x d^2 matrix."""
    w = d * np.where(np.eye(d, dtype=bool), 1.0, -1.0 / d)
    return np.diag(w.ravel()).astype(complex)


def digits(s: int, d: int, n: int) -> list:
    out = []
    for _ in range(n):
        out.append(s % d)
        s //= d
    return out[::-1]


def _digit_array(indices: np.ndarray, d: int, n: int) -> np.ndarray:
    powers = d ** np.arange(n - 1, -1, -1)
    return (np.asarray(indices)[:, None] // powers) % d


# --------------------------------------------------------------------------
# single-unitary correlator


def _record_parts(rec):
    if isinstance(rec, OutcomeDistribution):
        nz = np.flatnonzero(rec.probs)
        return rec.unitary_index, nz, rec.probs[nz], None
    if isinstance(rec, OutcomeRecord):
        return rec.unitary_index, rec.outcomes, rec.counts / rec.shots, rec
    raise TypeError(f"unsupported record type {type(rec).__name__}")


def pair_correlator(rec_i, rec_j, kernel: HammingKernel, variant: Variant = Variant.USTAT, auto: bool = False) -> float:
    """Kernel-weighted correlation of two outcome records for one unitary.

    Evaluated pairwise over the observed strings only. ``auto=True`` marks
    ``rec_i`` and ``rec_j`` as the same physical data; the U-statistic then
    removes the self-pairing of shots.
    """
    u_i, s_i, p_i, raw_i = _record_parts(rec_i)
    u_j, s_j, p_j, _ = _record_parts(rec_j)
    if u_i is not None and u_j is not None and u_i != u_j:
        raise ProtocolError(f"records belong to different unitaries ({u_i} != {u_j})")
    d, n = kernel.local_dim, kernel.n_sites
    if kernel.mode == "global":
        w = np.where(s_i[:, None] == s_j[None, :], float(kernel.dim), -1.0)
    else:
        ham = (_digit_array(s_i, d, n)[:, None, :] != _digit_array(s_j, d, n)[None, :, :]).sum(axis=2)
        w = float(d**n) * (-float(d)) ** (-ham.astype(float))
    value = float(p_i @ w @ p_j)
    if auto and variant is Variant.USTAT and raw_i is not None:
        m = raw_i.shots
        if m < 2:
            return float("nan")
        c = raw_i.counts.astype(float)
        value = float((c @ w @ c - kernel.diagonal * m) / (m * (m - 1)))
    return value


# --------------------------------------------------------------------------
# dataset level


def check_compatible(ds_i: MeasurementDataset, ds_j: MeasurementDataset) -> None:
    if ds_i.schedule_ref != ds_j.schedule_ref:
        raise ProtocolError("datasets were measured with different unitary schedules")
    if (ds_i.n_sites, ds_i.local_dim, ds_i.n_u) != (ds_j.n_sites, ds_j.local_dim, ds_j.n_u):
        raise ProtocolError("datasets differ in shape")


def cross_correlators(p_i: np.ndarray, p_j: np.ndarray, kernel: HammingKernel) -> np.ndarray:
    """Per-unitary ``p_i K p_j`` for frequency/probability arrays of shape (N_U, D)."""
    return np.einsum("us,us->u", p_i, kernel.apply(p_j))


def auto_correlators(data: np.ndarray, exact: bool, kernel: HammingKernel, variant: Variant) -> np.ndarray:
    """Per-unitary purity correlators from one dataset's array."""
    if exact:
        return cross_correlators(data, data, kernel)
    counts = np.asarray(data, dtype=float)
    m = counts.sum(axis=1)
    if variant is Variant.PLUGIN:
        f = counts / m[:, None]
        return cross_correlators(f, f, kernel)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (np.einsum("us,us->u", counts, kernel.apply(counts)) - kernel.diagonal * m) / (m * (m - 1))


def dataset_correlators(
    ds_i: MeasurementDataset, ds_j: MeasurementDataset, kernel: HammingKernel | None = None, variant=Variant.USTAT
) -> np.ndarray:
    """Per-unitary correlators between two datasets (auto-correlation if identical)."""
    check_compatible(ds_i, ds_j)
    kernel = kernel or HammingKernel.for_dataset(ds_i)
    variant = Variant(variant)
    if ds_i is ds_j:
        return auto_correlators(ds_i.data, ds_i.exact, kernel, variant)
    return cross_correlators(ds_i.frequencies(), ds_j.frequencies(), kernel)


def estimate_overlap(ds_i, ds_j, kernel=None, variant=Variant.USTAT) -> float:
    """Tr(rho_i rho_j) estimate; the purity when ``ds_i is ds_j``."""
    return float(np.mean(dataset_correlators(ds_i, ds_j, kernel, variant)))


@dataclass(frozen=True)
class Correlators:
    """Per-unitary correlators of a dataset pair, the unit that bootstrap resamples."""

    c12: np.ndarray
    c11: np.ndarray
    c22: np.ndarray

    @classmethod
    def from_datasets(cls, ds1, ds2, kernel=None, variant=Variant.USTAT) -> "Correlators":
        check_compatible(ds1, ds2)
        kernel = kernel or HammingKernel.for_dataset(ds1)
        return cls(
            dataset_correlators(ds1, ds2, kernel, variant),
            dataset_correlators(ds1, ds1, kernel, variant),
            dataset_correlators(ds2, ds2, kernel, variant),
        )

    @property
    def n_u(self) -> int:
        return self.c12.size

    def stack(self) -> np.ndarray:
        return np.stack([self.c12, self.c11, self.c22])


def fidelities_from_means(overlap_12, purity_1, purity_2):
    """F_max and F_GM from (possibly array-valued) overlap and purity estimates."""
    overlap_12 = np.asarray(overlap_12, dtype=float)
    p1 = np.asarray(purity_1, dtype=float)
    p2 = np.asarray(purity_2, dtype=float)
    ok = (p1 > 0) & (p2 > 0)
    # F_max only needs the larger purity to be positive
    big = np.maximum(p1, p2)
    with np.errstate(invalid="ignore", divide="ignore"):
        f_max = np.where(big > 0, overlap_12 / np.where(big > 0, big, 1.0), np.nan)
        f_gm = np.where(ok, overlap_12 / np.sqrt(np.where(ok, p1 * p2, 1.0)), np.nan)
    return f_max, f_gm


@dataclass
class EstimateReport:
    overlap_12: float
    purity_1: float
    purity_2: float
    f_max: float
    f_gm: float
    se_f_max: float = float("nan")
    se_f_gm: float = float("nan")
    bias_f_max: float = float("nan")
    bias_f_gm: float = float("nan")
    se_overlap: float = float("nan")
    se_purity_1: float = float("nan")
    se_purity_2: float = float("nan")
    f_max_raw: float = float("nan")
    f_gm_raw: float = float("nan")
    n_u: int = 0
    n_m1: int = 0
    n_m2: int = 0
    estimator_variant: str = Variant.USTAT.value
    kernel: str = "local"
    unreliable: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, float) and not math.isfinite(val):
                out[key] = None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "EstimateReport":
        vals = {k: (float("nan") if v is None else v) for k, v in obj.items()}
        return cls(**vals)

    def table(self) -> str:
        rows = [
            ("overlap", self.overlap_12, self.se_overlap),
            ("purity_1", self.purity_1, self.se_purity_1),
            ("purity_2", self.purity_2, self.se_purity_2),
            ("F_max", self.f_max, self.se_f_max),
            ("F_GM", self.f_gm, self.se_f_gm),
        ]
        lines = [f"{'quantity':<10}{'estimate':>14}{'std.err':>14}"]
        lines += [f"{name:<10}{val:>14.6f}{se:>14.6f}" for name, val, se in rows]
        if math.isfinite(self.bias_f_max):
            lines.append(f"{'bias F_max':<10}{self.bias_f_max:>14.6f}")
            lines.append(f"{'bias F_GM':<10}{self.bias_f_gm:>14.6f}")
        lines.append(f"N_U={self.n_u} N_M=({self.n_m1},{self.n_m2}) variant={self.estimator_variant}")
        if self.unreliable:
            lines.append("UNRELIABLE: nonpositive purity estimate")
        return "\n".join(lines)


def _shots_of(ds: MeasurementDataset) -> int:
    return 0 if ds.exact else int(np.median(ds.shots))


def report_from_correlators(corr: Correlators, variant=Variant.USTAT, kernel: str = "local") -> EstimateReport:
    o, p1, p2 = (float(np.mean(c)) for c in (corr.c12, corr.c11, corr.c22))
    f_max, f_gm = fidelities_from_means(o, p1, p2)
    f_max, f_gm = float(f_max), float(f_gm)
    return EstimateReport(
        overlap_12=o,
        purity_1=p1,
        purity_2=p2,
        f_max=f_max,
        f_gm=f_gm,
        f_max_raw=f_max,
        f_gm_raw=f_gm,
        n_u=corr.n_u,
        estimator_variant=Variant(variant).value,
        kernel=kernel,
        unreliable=not (p1 > 0 and p2 > 0),
    )


def estimate_fidelities(ds1, ds2, kernel=None, variant=Variant.USTAT, bootstrap=None) -> EstimateReport:
    """Overlap, purities and both fidelities of a dataset pair.

    With a :class:`~xpv.resample.BootstrapConfig` the standard errors and
    first-order bias corrections are filled in, and ``f_max``/``f_gm`` hold
    the bias-corrected values (the raw ones stay in ``*_raw``).
    """
    kernel = kernel or HammingKernel.for_dataset(ds1)
    corr = Correlators.from_datasets(ds1, ds2, kernel, variant)
    report = report_from_correlators(corr, variant, kernel.mode)
    report.n_m1, report.n_m2 = _shots_of(ds1), _shots_of(ds2)
    if bootstrap is not None:
        from .resample import attach_bootstrap

        attach_bootstrap(report, corr, bootstrap)
    return report


def subsystem_fidelities(ds1, ds2, sizes, variant=Variant.USTAT, bootstrap=None) -> dict:
    """Reports for the connected partitions ``[0, N_A)`` with ``N_A`` in ``sizes``."""
    out = {}
    for n_a in sizes:
        keep = list(range(n_a))
        out[n_a] = estimate_fidelities(marginalize(ds1, keep), marginalize(ds2, keep), None, variant, bootstrap)
    return out


def global_correlation_form(ds1: MeasurementDataset, ds2: MeasurementDataset, reference: int = 0) -> dict:
    """Pearson and max-normalised correlation of P_U(s) across unitaries at fixed ``s``."""
    if ds1.mode != "global" or ds2.mode != "global":
        raise ModeError("the correlation-coefficient form needs global-unitary datasets")
    check_compatible(ds1, ds2)
    x = ds1.frequencies()[:, reference]
    y = ds2.frequencies()[:, reference]
    cov = np.mean(x * y) - x.mean() * y.mean()
    vx = np.mean(x * x) - x.mean() ** 2
    vy = np.mean(y * y) - y.mean() ** 2
    return {"f_gm_pearson": float(cov / np.sqrt(vx * vy)), "f_max_maxnorm": float(cov / max(vx, vy))}
