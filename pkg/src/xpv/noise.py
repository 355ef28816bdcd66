"""Systematic errors of the protocol: miscalibrated unitaries and local depolarization.

Platform ``i`` implements ``U V_i`` instead of the shared ``U``, with
``V_i = ⊗_k exp(i eta_i h_k)`` and ``h_k`` drawn from the GUE, and its state
is locally depolarized with strength ``p_D`` before the rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import randsrc
from .errors import ChannelError, Unsupported
from .measure import MeasurementDataset, born_probabilities_batch, sample_counts_batch
from .qcore import DensityMatrix, PureState, as_density, partial_trace, purity
from .randsrc import LocalUnitary, Mode, UnitarySchedule


@dataclass(frozen=True)
class NoiseProfile:
    eta: float = 0.0
    p_depol: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0 or self.p_depol < 0:
            raise ValueError("noise strengths must be nonnegative")

    @property
    def is_clean(self) -> bool:
        return self.eta == 0 and self.p_depol == 0


def _expm_i_hermitian(h: np.ndarray, eta: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * eta * w)) @ v.conj().T


def _perturbations(n_sites: int, d: int, eta: float, seed: int, platform: int, u: int) -> np.ndarray:
    out = []
    for k in range(n_sites):
        h = randsrc.sample_gue(d, randsrc.stream(seed, randsrc.TAG_NOISE, platform, u, k))
        out.append(_expm_i_hermitian(h, eta))
    return np.array(out)


def perturb_unitary(u: LocalUnitary, profile: NoiseProfile, unitary_index: int, platform: int = 0) -> LocalUnitary:
    """Right-multiply every factor by its own exp(i eta h); eta = 0 returns ``u``."""
    if profile.eta == 0:
        return u
    n, d = u.factors.shape[0], u.factors.shape[1]
    v = _perturbations(n, d, profile.eta, profile.seed, platform, unitary_index)
    return LocalUnitary(u.factors @ v)


def perturb_schedule(schedule: UnitarySchedule, profile: NoiseProfile, platform: int = 0) -> UnitarySchedule:
    if profile.eta == 0:
        return schedule
    if schedule.mode is not Mode.LOCAL:
        raise Unsupported("unitary errors are modelled for local schedules only")
    n, d = schedule.n_sites, schedule.local_dim
    v = np.array([_perturbations(n, d, profile.eta, profile.seed, platform, u) for u in range(schedule.n_u)])
    return UnitarySchedule(schedule.matrices @ v, n, d, schedule.mode, schedule.ensemble, None)


def _single_site_reduced_sum(rho: DensityMatrix) -> np.ndarray:
    """sum_k Tr_k(rho) ⊗ I_k / d, with the identity reinserted at site k."""
    n, d = rho.num_sites, rho.local_dim
    dim = rho.dim
    out = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(d) / d
    for k in range(n):
        left, right = d**k, d ** (n - k - 1)
        a = rho.matrix.reshape(left, d, right, left, d, right)
        reduced = np.einsum("lirmis->lrms", a)
        out += np.einsum("lrms,ab->larmbs", reduced, eye).reshape(dim, dim)
    return out


def depolarize(rho, p_d: float) -> DensityMatrix:
    """(1 - 2 p N) rho + 2 p sum_k Tr_k(rho) ⊗ 1_k / 2."""
    rho = as_density(rho)
    n = rho.num_sites
    if p_d < 0 or 1.0 - 2.0 * p_d * n <= 0:
        raise ChannelError(f"p_D={p_d} is not a valid depolarization strength for {n} sites")
    if p_d == 0:
        return rho
    m = (1.0 - 2.0 * p_d * n) * rho.matrix + 2.0 * p_d * _single_site_reduced_sum(rho)
    return DensityMatrix((m + m.conj().T) / 2, n, rho.local_dim)


def _reduced_purity_ratio(rho: DensityMatrix) -> float:
    """sum_k Tr[(Tr_k rho)^2] / Tr[rho^2]."""
    n = rho.num_sites
    total = 0.0
    for k in range(n):
        keep = [j for j in range(n) if j != k]
        total += purity(partial_trace(rho, keep)) if keep else 1.0
    return total / purity(rho)


def predict_fidelity_shift(rho1, rho2, profile_1: NoiseProfile, profile_2: NoiseProfile) -> dict:
    """First-order shifts of F_max and F_GM for identical states on both platforms."""
    rho1, rho2 = as_density(rho1), as_density(rho2)
    if rho1.matrix.shape != rho2.matrix.shape or not np.allclose(rho1.matrix, rho2.matrix, atol=1e-10):
        raise Unsupported("the first-order expansion is only available for rho1 == rho2")
    n = rho1.num_sites
    ratio = _reduced_purity_ratio(rho1)
    eta2 = profile_1.eta**2 + profile_2.eta**2
    unitary_term = -2.0 * eta2 * n + eta2 * ratio
    # F_max divides by the larger purity, i.e. the less depolarized platform
    dp = abs(profile_2.p_depol - profile_1.p_depol)
    depol_term = -2.0 * dp * n + dp * ratio
    return {"delta_f_gm": unitary_term, "delta_f_max": unitary_term + depol_term}


def simulate_imperfect_protocol(
    states,
    schedule: UnitarySchedule,
    profiles,
    shots,
    seed: int = 0,
    platform_ids=("platform-1", "platform-2"),
):
    """Both platforms measure with their own imperfect unitaries.

    The returned datasets still reference the clean shared schedule, so the
    estimator sees the mismatch exactly as it would in an experiment.
    ``shots`` is one value or a pair; ``None`` means exact probabilities.
    """
    if not isinstance(shots, (tuple, list)):
        shots = (shots, shots)
    out = []
    for i, (state, prof, nm) in enumerate(zip(states, profiles, shots)):
        noisy = depolarize(state, prof.p_depol) if prof.p_depol > 0 else state
        sched_i = perturb_schedule(schedule, prof, platform=i)
        probs = born_probabilities_batch(noisy, sched_i)
        if nm is None:
            data, exact = probs, True
        else:
            data, exact = sample_counts_batch(probs, nm, seed, platform=i), False
        out.append(
            MeasurementDataset(
                platform_ids[i], schedule.ref, schedule.n_sites, schedule.local_dim, data, exact, schedule.mode.value
            )
        )
    return tuple(out)
