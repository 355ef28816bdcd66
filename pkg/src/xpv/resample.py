"""Bootstrap over unitaries: standard errors, bias correction, budget allocation."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import randsrc
from .estimate import Correlators, EstimateReport, HammingKernel, Variant, fidelities_from_means
from .measure import MeasurementDataset, subsample_shots, truncate_unitaries


@dataclass(frozen=True)
class BootstrapConfig:
    n_resamples: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 50:
            raise ValueError("n_resamples must be >= 50")


def resampled_means(corr: Correlators, cfg: BootstrapConfig) -> np.ndarray:
    """Means of (c12, c11, c22) for each resample, shape ``(3, n_resamples)``.

    Each resample draws ``N_U`` unitary indices with replacement; all of a
    unitary's records travel together.
    """
    n_u = corr.n_u
    if n_u < 2:
        raise ValueError("bootstrap needs at least two unitaries")
    rng = randsrc.stream(cfg.seed, randsrc.TAG_BOOTSTRAP)
    idx = rng.integers(0, n_u, size=(cfg.n_resamples, n_u))
    stacked = corr.stack()
    return np.stack([stacked[i][idx].mean(axis=1) for i in range(3)])


def _std(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(np.std(x, ddof=1)) if x.size > 1 else float("nan")


def bootstrap_stats(corr: Correlators, cfg: BootstrapConfig) -> dict:
    """Standard errors and first-order bias of every estimated quantity."""
    means = resampled_means(corr, cfg)
    f_max_b, f_gm_b = fidelities_from_means(*means)
    point = [float(np.mean(c)) for c in (corr.c12, corr.c11, corr.c22)]
    f_max, f_gm = (float(v) for v in fidelities_from_means(*point))
    return {
        "se_overlap": _std(means[0]),
        "se_purity_1": _std(means[1]),
        "se_purity_2": _std(means[2]),
        "se_f_max": _std(f_max_b),
        "se_f_gm": _std(f_gm_b),
        "bias_f_max": float(np.nanmean(f_max_b)) - f_max,
        "bias_f_gm": float(np.nanmean(f_gm_b)) - f_gm,
    }


def bootstrap_se(ds1, ds2, kernel=None, variant=Variant.USTAT, cfg: BootstrapConfig = BootstrapConfig()) -> dict:
    stats = bootstrap_stats(Correlators.from_datasets(ds1, ds2, kernel, variant), cfg)
    return {k: v for k, v in stats.items() if k.startswith("se_")}


def bias_correct(ds1, ds2, kernel=None, variant=Variant.USTAT, cfg: BootstrapConfig = BootstrapConfig()) -> dict:
    """Bootstrap bias (mean over resamples minus point estimate); subtract it to correct."""
    stats = bootstrap_stats(Correlators.from_datasets(ds1, ds2, kernel, variant), cfg)
    return {"bias_f_max": stats["bias_f_max"], "bias_f_gm": stats["bias_f_gm"]}


def attach_bootstrap(report: EstimateReport, corr: Correlators, cfg: BootstrapConfig) -> EstimateReport:
    stats = bootstrap_stats(corr, cfg)
    for key, val in stats.items():
        setattr(report, key, val)
    if np.isfinite(stats["bias_f_max"]):
        report.f_max = report.f_max_raw - stats["bias_f_max"]
    if np.isfinite(stats["bias_f_gm"]):
        report.f_gm = report.f_gm_raw - stats["bias_f_gm"]
    return report


# --------------------------------------------------------------------------
# iterative allocation of N_U versus N_M


class BudgetStatus(str, enum.Enum):
    RUNNING = "running"
    CONVERGED = "converged"
    NOT_CONVERGED = "not_converged"


@dataclass
class BudgetState:
    n_u: int
    n_m: int
    target_se: float
    step: int = 10
    history: list = field(default_factory=list)
    status: BudgetStatus = BudgetStatus.RUNNING

    @property
    def total_shots(self) -> int:
        return self.n_u * self.n_m

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "n_u", "n_m", "se", "decision"])
            for i, row in enumerate(self.history):
                writer.writerow([i, row["n_u"], row["n_m"], f"{row['se']:.8g}", row["decision"]])


# acquire(kind, n, ds1, ds2) -> (ds1, ds2) with n more unitaries ("n_u") or n
# more shots per unitary ("n_m")
AcquireFn = Callable[[str, int, MeasurementDataset, MeasurementDataset], tuple]


def _se(ds1, ds2, kernel, variant, cfg, statistic) -> float:
    stats = bootstrap_stats(Correlators.from_datasets(ds1, ds2, kernel, variant), cfg)
    return stats[f"se_{statistic}"]


def allocate_budget(
    acquire: AcquireFn,
    ds1: MeasurementDataset,
    ds2: MeasurementDataset,
    start: BudgetState,
    cfg: BootstrapConfig = BootstrapConfig(),
    variant=Variant.USTAT,
    statistic: str = "f_max",
    max_total_shots: int = 10**7,
    max_steps: int = 500,
):
    """Grow N_U or N_M step by step until the bootstrap SE reaches the target.

    At each step the SE is re-estimated after removing ``step`` unitaries and,
    separately, ``step`` shots per unitary; the dimension whose removal hurts
    most is grown. Ties grow N_M. Returns ``(state, ds1, ds2)``.
    """
    state = start
    kernel = HammingKernel.for_dataset(ds1)
    for i in range(max_steps + 1):
        se = _se(ds1, ds2, kernel, variant, cfg, statistic)
        if se <= state.target_se:
            state.history.append({"n_u": state.n_u, "n_m": state.n_m, "se": se, "decision": "stop"})
            state.status = BudgetStatus.CONVERGED
            return state, ds1, ds2
        if state.total_shots >= max_total_shots or i == max_steps:
            state.history.append({"n_u": state.n_u, "n_m": state.n_m, "se": se, "decision": "cap"})
            state.status = BudgetStatus.NOT_CONVERGED
            return state, ds1, ds2
        n = state.step
        se_u = se_m = se
        if state.n_u - n >= 2:
            se_u = _se(truncate_unitaries(ds1, state.n_u - n), truncate_unitaries(ds2, state.n_u - n), kernel, variant, cfg, statistic)
        if state.n_m - n >= 2:
            seed = cfg.seed + i
            se_m = _se(subsample_shots(ds1, state.n_m - n, seed), subsample_shots(ds2, state.n_m - n, seed + 1), kernel, variant, cfg, statistic)
        if se_u - se > se_m - se:
            decision = "grow_n_u"
        else:
            decision = "grow_n_m" if se_u - se < se_m - se else "grow_n_m(tie)"
        state.history.append({"n_u": state.n_u, "n_m": state.n_m, "se": se, "decision": decision})
        if decision == "grow_n_u":
            ds1, ds2 = acquire("n_u", n, ds1, ds2)
            state.n_u += n
        else:
            ds1, ds2 = acquire("n_m", n, ds1, ds2)
            state.n_m += n
    return state, ds1, ds2


class SimulatedPair:
    """Acquisition callback for :func:`allocate_budget` backed by the simulator.

    Unitary ``u`` comes from the schedule stream of ``schedule_seed`` and
    every extra batch of shots uses its own shot stream, so growing either
    dimension only adds data and never redraws what exists.
    """

    def __init__(self, state_1, state_2, n_sites: int, schedule_seed: int, shot_seed: int, local_dim: int = 2):
        self.states = (state_1, state_2)
        self.n_sites, self.local_dim = n_sites, local_dim
        self.schedule_seed, self.shot_seed = schedule_seed, shot_seed
        self.batches: list[int] = []  # shots per batch, shared by every unitary
        self.probs = [np.zeros((0, local_dim**n_sites)), np.zeros((0, local_dim**n_sites))]
        self.counts = [np.zeros((0, local_dim**n_sites), np.int64), np.zeros((0, local_dim**n_sites), np.int64)]

    def _schedule(self, n_u: int) -> randsrc.UnitarySchedule:
        plan = randsrc.SchedulePlan(n_u, self.n_sites, self.local_dim, master_seed=self.schedule_seed)
        return randsrc.sample_schedule(plan)

    def _datasets(self, schedule):
        return tuple(
            MeasurementDataset(f"p{i + 1}", schedule.ref, self.n_sites, self.local_dim, self.counts[i])
            for i in range(2)
        )

    def _draw(self, probs, n_shots, platform, first_u, batch):
        from .measure import sample_counts_batch

        return sample_counts_batch(probs, n_shots, self.shot_seed, platform, first_u, batch)

    def initial(self, n_u: int, n_m: int):
        self.batches = []
        self.probs = [np.zeros_like(p[:0]) for p in self.probs]
        self.counts = [np.zeros_like(c[:0]) for c in self.counts]
        self.batches.append(n_m)
        return self._grow_u(n_u)

    def _grow_u(self, n: int):
        from .measure import born_probabilities_batch

        old = self.counts[0].shape[0]
        sched = self._schedule(old + n)
        new = sched.subset(range(old, old + n))
        for i, st in enumerate(self.states):
            p = born_probabilities_batch(st, new)
            c = sum(self._draw(p, m, i, old, b) for b, m in enumerate(self.batches))
            self.probs[i] = np.concatenate([self.probs[i], p])
            self.counts[i] = np.concatenate([self.counts[i], c])
        return self._datasets(sched)

    def _grow_m(self, n: int):
        self.batches.append(n)
        b = len(self.batches) - 1
        for i in range(2):
            self.counts[i] = self.counts[i] + self._draw(self.probs[i], n, i, 0, b)
        return self._datasets(self._schedule(self.counts[0].shape[0]))

    def __call__(self, kind: str, n: int, ds1=None, ds2=None):
        if kind == "n_u":
            return self._grow_u(n)
        if kind == "n_m":
            return self._grow_m(n)
        raise ValueError(f"unknown dimension {kind!r}")
