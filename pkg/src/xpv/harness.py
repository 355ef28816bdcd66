"""Monte Carlo studies of the estimator: error scaling, budget exponents, noise and quenches.

Every study is driven by an :class:`ExperimentPlan` and returns a list of
row dicts (the CSV contract). Trial ``t`` draws its state, schedule and
shots from seeds derived from ``(plan.seed, t)`` only, so the same trial
sees the same state and unitaries in every grid cell (common random
numbers) and any row can be regenerated on its own.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, dynamics, randsrc
from .errors import FitRejected
from .estimate import HammingKernel, Variant, estimate_fidelities
from .measure import acquire_dataset, born_probabilities_batch, marginalize
from .noise import NoiseProfile, predict_fidelity_shift, simulate_imperfect_protocol
from .qcore import (
    DensityMatrix,
    StateKind,
    StateSpec,
    as_density,
    build_pure,
    build_state,
    fidelity_max,
    partial_trace,
)
from .randsrc import Mode, SchedulePlan, sample_schedule


class Study(str, enum.Enum):
    ERROR_VS_NM = "error_vs_nm"
    BUDGET_EXPONENT = "budget_exponent"
    NOISE_SWEEP = "noise_sweep"
    QUENCH_FIDELITY = "quench_fidelity"
    GLOBAL_VS_LOCAL = "global_vs_local"


@dataclass(frozen=True)
class ExperimentPlan:
    """One study and its grid.

    ``n_m`` entries of ``None`` mean exact probabilities. For the quench study
    ``n_sites`` lists the subsystem sizes ``N_A`` and ``model`` holds the
    chain (``n``, ``j0``, ``alpha``, ``b``, ``disorder_bound``).
    """

    study: Study
    state_family: tuple = ("pure_product", None)
    families: tuple = ()
    n_sites: tuple = (4,)
    n_u: tuple = (100,)
    n_m: tuple = (None,)
    eta2: tuple = (0.0,)
    p_d: tuple = (0.0,)
    t1: float = 1e-3
    dt: tuple = (0.0,)
    trials: int = 50
    epsilon: float = 0.05
    seed: int = 0
    theory_side: bool = False
    variant: str = "ustat"
    model: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    n_m_max: int = 8192
    hysteresis: int = 2

    def __post_init__(self):
        object.__setattr__(self, "study", Study(self.study))
        for name in ("state_family", "families", "n_sites", "n_u", "n_m", "eta2", "p_d", "dt"):
            val = getattr(self, name)
            object.__setattr__(self, name, tuple(val) if isinstance(val, (list, tuple)) else (val,))
        for name in ("n_sites", "n_u", "n_m"):
            if not getattr(self, name):
                raise ValueError(f"grid {name!r} is empty")
        if self.trials < 10:
            raise ValueError("trials must be >= 10 for a statistical claim")
        if len(self.state_family) == 1:
            object.__setattr__(self, "state_family", (self.state_family[0], None))

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown plan keys: {sorted(unknown)}")
        obj = dict(obj)
        if "n_m" in obj:
            obj["n_m"] = [None if v in (None, "inf", "exact") else int(v) for v in _as_list(obj["n_m"])]
        return cls(**obj)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["study"] = self.study.value
        return out


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    prefactor: float
    stderr_exponent: float
    r_squared: float
    n_points: int

    def require(self, min_r2: float = 0.9) -> "ScalingFit":
        """Raise instead of reporting an exponent from a poor fit."""
        if self.n_points < 4:
            raise FitRejected(f"fit needs >= 4 points, got {self.n_points}")
        if not self.r_squared >= min_r2:
            raise FitRejected(f"r^2 = {self.r_squared:.3f} < {min_r2}")
        return self


def _linear_fit(x, y) -> tuple:
    res = stats.linregress(np.asarray(x, float), np.asarray(y, float))
    return res.slope, res.intercept, res.stderr, res.rvalue**2


def fit_power_law(x, y) -> ScalingFit:
    """y = prefactor * x^exponent, fitted in log-log space."""
    slope, icpt, se, r2 = _linear_fit(np.log(x), np.log(y))
    return ScalingFit(float(slope), float(np.exp(icpt)), float(se), float(r2), len(x))


def fit_exponential2(x, y) -> ScalingFit:
    """y = prefactor * 2^(exponent * x), i.e. log2 y linear in x."""
    slope, icpt, se, r2 = _linear_fit(x, np.log2(y))
    return ScalingFit(float(slope), float(2.0**icpt), float(se), float(r2), len(x))


# --------------------------------------------------------------------------
# per-trial building blocks


def trial_seed(master: int, t: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(randsrc.TAG_HARNESS, t)).generate_state(1, np.uint64)[0])


def _build(kind, n: int, seed: int):
    spec = StateSpec(kind, n, seed=seed)
    if spec.kind in (StateKind.PURE_PRODUCT, StateKind.PURE_HAAR_RANDOM, StateKind.NEEL):
        return build_pure(spec)
    return build_state(spec)


def state_pair(family: tuple, n: int, seed: int):
    """(rho1, rho2, oracle F_max); a missing second kind means rho2 = rho1."""
    first, second = family
    s1 = _build(first, n, seed)
    s2 = s1 if second is None else _build(second, n, seed + 1)
    oracle = 1.0 if s2 is s1 else fidelity_max(as_density(s1), as_density(s2))
    return s1, s2, oracle


@dataclass
class _Trial:
    """Exact outcome probabilities of one trial's state pair, shared by all grid cells."""

    seed: int
    schedule: randsrc.UnitarySchedule
    probs1: np.ndarray
    probs2: np.ndarray
    oracle: float


def _prepare(plan: ExperimentPlan, family, n: int, n_u: int, t: int, mode=Mode.LOCAL) -> _Trial:
    seed = trial_seed(plan.seed, t)
    s1, s2, oracle = state_pair(family, n, seed)
    sched = sample_schedule(SchedulePlan(n_u, n, mode=mode, master_seed=seed))
    p1 = born_probabilities_batch(s1, sched)
    p2 = p1 if s2 is s1 else born_probabilities_batch(s2, sched)
    return _Trial(seed, sched, p1, p2, oracle)


def _estimate(tr: _Trial, n_u: int, n_m1, n_m2, variant, kernel=None):
    sched = tr.schedule.subset(range(n_u)) if n_u < tr.schedule.n_u else tr.schedule
    d1 = acquire_dataset(None, sched, n_m1, tr.seed, "p1", 0, tr.probs1[:n_u])
    d2 = acquire_dataset(None, sched, n_m2, tr.seed, "p2", 1, tr.probs2[:n_u])
    return estimate_fidelities(d1, d2, kernel, variant)


def _mean_se(vals) -> tuple:
    v = np.asarray(vals, float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")


# --------------------------------------------------------------------------
# studies


def run_error_vs_nm(plan: ExperimentPlan) -> list[dict]:
    """Mean |F_max estimate - oracle| over trials for every (N, N_U, N_M) cell."""
    variant = Variant(plan.variant)
    n_u_max = max(plan.n_u)
    cells: dict = {}
    for n in plan.n_sites:
        kernel = HammingKernel("local", 2, n)
        for t in range(plan.trials):
            tr = _prepare(plan, plan.state_family, n, n_u_max, t)
            for n_u in plan.n_u:
                for n_m in plan.n_m:
                    rep = _estimate(tr, n_u, n_m, None if plan.theory_side else n_m, variant, kernel)
                    cells.setdefault((n, n_u, n_m), []).append((abs(rep.f_max - tr.oracle), rep.unreliable))
    rows = []
    for (n, n_u, n_m), vals in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or 0)):
        errs, flags = zip(*vals)
        mean, se = _mean_se(errs)
        rows.append(
            {
                "n_sites": n,
                "n_u": n_u,
                "n_m": "exact" if n_m is None else n_m,
                "theory_side": plan.theory_side,
                "trials": len(errs),
                "unreliable": int(sum(flags)),
                "mean_abs_error": mean,
                "se_error": se,
            }
        )
    return rows


def run_theory_experiment_mode(plan: ExperimentPlan) -> list[dict]:
    """Error sweep with exact probabilities on the second platform."""
    return run_error_vs_nm(replace(plan, theory_side=True))


def error_slope(rows: list[dict]) -> ScalingFit:
    """Power-law fit of mean error against N_M over the sampled rows."""
    pts = [(r["n_m"], r["mean_abs_error"]) for r in rows if r["n_m"] != "exact"]
    x, y = zip(*pts)
    return fit_power_law(x, y)


def n_m_grid(n_max: int) -> list[int]:
    """Quarter-octave grid of shot numbers 2, 2, 3, 3, 4, 5, ... up to ``n_max``, deduplicated."""
    out = []
    k = 4
    while True:
        v = int(round(2 ** (k / 4)))
        if v > n_max:
            break
        if not out or v != out[-1]:
            out.append(v)
        k += 1
    return out


def minimal_n_m(error_at, grid: list[int], eps: float, hysteresis: int = 2) -> dict:
    """Smallest grid value whose mean error is <= eps, found by bisection.

    A candidate is accepted only if the next ``hysteresis`` grid points also
    pass; otherwise the search restarts above the failing point. Returns the
    index, value, its error, a ``flagged`` marker when even the largest grid
    value fails, and all evaluated points.
    """
    cache: dict = {}

    def err(i):
        if i not in cache:
            cache[i] = error_at(grid[i])
        return cache[i]

    top = len(grid) - 1
    if err(top) > eps:
        return {"index": top, "n_m": grid[top], "error": cache[top], "flagged": True, "evaluated": _evals(grid, cache)}
    lo = 0
    while True:
        if err(lo) <= eps:
            hi = lo
        else:
            hi = top
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if err(mid) <= eps:
                    hi = mid
                else:
                    lo = mid
        bad = next((j for j in range(hi + 1, min(hi + hysteresis, top) + 1) if err(j) > eps), None)
        if bad is None:
            return {"index": hi, "n_m": grid[hi], "error": cache[hi], "flagged": False, "evaluated": _evals(grid, cache)}
        lo = bad


def _evals(grid, cache) -> list:
    return [(grid[i], cache[i]) for i in sorted(cache)]


def run_budget_exponent(plan: ExperimentPlan) -> tuple[dict, list[dict]]:
    """Minimal N_M for error <= epsilon at every N_A, then log2 N_M fitted against N_A.

    Returns ``({family: ScalingFit}, rows)``; families with fewer than four
    unflagged points get no fit.
    """
    variant = Variant(plan.variant)
    n_u = plan.n_u[0]
    grid = n_m_grid(plan.n_m_max)
    families = plan.families or (plan.state_family[0],)
    fits, rows = {}, []
    for fam in families:
        family = (fam, None)
        pts = []
        for n in plan.n_sites:
            kernel = HammingKernel("local", 2, n)
            trials = [_prepare(plan, family, n, n_u, t) for t in range(plan.trials)]

            def error_at(n_m):
                n2 = None if plan.theory_side else n_m
                return float(np.mean([abs(_estimate(tr, n_u, n_m, n2, variant, kernel).f_max - tr.oracle) for tr in trials]))

            res = minimal_n_m(error_at, grid, plan.epsilon, plan.hysteresis)
            rows.append(
                {
                    "family": StateKind(fam).value,
                    "n_sites": n,
                    "n_u": n_u,
                    "n_m_min": res["n_m"],
                    "error": res["error"],
                    "flagged": res["flagged"],
                    "evaluations": len(res["evaluated"]),
                }
            )
            if not res["flagged"]:
                pts.append((n, res["n_m"]))
        if len(pts) >= 4:
            fits[StateKind(fam).value] = fit_exponential2(*zip(*pts))
    return fits, rows


def _profiles(plan: ExperimentPlan, seed: int, t: int, eta2_sq=None, p_d2=None):
    """Platform noise from ``plan.noise`` = {eta1, eta2, pd1, pd2, seed}; sweep values override platform 2."""
    nz = plan.noise
    if "seed" in nz:
        seed = trial_seed(int(nz["seed"]), t)
    eta2 = math.sqrt(eta2_sq) if eta2_sq is not None else float(nz.get("eta2", 0.0))
    pd2 = p_d2 if p_d2 is not None else float(nz.get("pd2", 0.0))
    return (
        NoiseProfile(float(nz.get("eta1", 0.0)), float(nz.get("pd1", 0.0)), seed),
        NoiseProfile(eta2, pd2, seed),
    )


def run_noise_sweep(plan: ExperimentPlan) -> list[dict]:
    """Estimated fidelities of identical states under platform-2 unitary errors and depolarization."""
    variant = Variant(plan.variant)
    n_u, n_m = plan.n_u[0], plan.n_m[0]
    rows = []
    for n in plan.n_sites:
        for eta2 in plan.eta2:
            for p_d in plan.p_d:
                f_max, f_gm, pur2, pred = [], [], [], None
                for t in range(plan.trials):
                    seed = trial_seed(plan.seed, t)
                    s1, _, _ = state_pair(plan.state_family, n, seed)
                    sched = sample_schedule(SchedulePlan(n_u, n, master_seed=seed))
                    profs = _profiles(plan, seed, t, eta2, p_d)
                    d1, d2 = simulate_imperfect_protocol((s1, s1), sched, profs, n_m, seed)
                    rep = estimate_fidelities(d1, d2, None, variant)
                    f_max.append(rep.f_max)
                    f_gm.append(rep.f_gm)
                    pur2.append(rep.purity_2)
                    if pred is None:
                        pred = predict_fidelity_shift(s1, s1, *profs)
                m_max, se_max = _mean_se(f_max)
                m_gm, se_gm = _mean_se(f_gm)
                m_p2, se_p2 = _mean_se(pur2)
                rows.append(
                    {
                        "n_sites": n,
                        "eta2_sq": eta2,
                        "p_d2": p_d,
                        "n_u": n_u,
                        "n_m": "exact" if n_m is None else n_m,
                        "trials": plan.trials,
                        "f_max": m_max,
                        "se_f_max": se_max,
                        "f_gm": m_gm,
                        "se_f_gm": se_gm,
                        "purity_2": m_p2,
                        "se_purity_2": se_p2,
                        "pred_delta_f_max": float(pred["delta_f_max"]),
                        "pred_delta_f_gm": float(pred["delta_f_gm"]),
                    }
                )
    return rows


def _chain(plan: ExperimentPlan, seed: int) -> dynamics.XYModel:
    cfg = dict(plan.model)
    n = int(cfg.get("n", 8))
    kw = dict(
        j0=float(cfg.get("j0", dynamics.J0_DEFAULT)),
        alpha=float(cfg.get("alpha", dynamics.ALPHA_DEFAULT)),
        b_field=float(cfg.get("b", 0.0)),
    )
    bound = cfg.get("disorder_bound")
    if bound:
        return dynamics.XYModel.with_random_disorder(n, float(bound), seed, **kw)
    return dynamics.XYModel(n, **kw)


def run_quench_fidelity(plan: ExperimentPlan) -> list[dict]:
    """Subsystem F_max between the Neel quench at t1 (platform 1) and t1 + dt (platform 2).

    With a ``disorder_bound`` every trial draws its own disorder realization,
    so the reported mean and SE are over realizations and measurement noise
    together. ``n_sites`` are the partition sizes [1 -> N_A].
    """
    variant = Variant(plan.variant)
    n_u, n_m = plan.n_u[0], plan.n_m[0]
    label = "disordered" if plan.model.get("disorder_bound") else "clean"
    cells: dict = {}
    for t in range(plan.trials):
        seed = trial_seed(plan.seed, t)
        model = _chain(plan, seed)
        prop = dynamics.propagator(model)
        psi0 = dynamics.neel_state(model.n_sites)
        psi1 = prop.evolve(psi0, plan.t1)
        sched = sample_schedule(SchedulePlan(n_u, model.n_sites, master_seed=seed))
        profs = _profiles(plan, seed, t)
        for dt in plan.dt:
            psi2 = prop.evolve(psi0, plan.t1 + dt)
            d1, d2 = simulate_imperfect_protocol((psi1, psi2), sched, profs, n_m, seed)
            r1, r2 = psi1.to_density(), psi2.to_density()
            for n_a in plan.n_sites:
                keep = list(range(n_a))
                rep = estimate_fidelities(marginalize(d1, keep), marginalize(d2, keep), None, variant)
                oracle = fidelity_max(partial_trace(r1, keep), partial_trace(r2, keep))
                cell = cells.setdefault((dt, n_a), {"f": [], "oracle": []})
                cell["f"].append(rep.f_max)
                cell["oracle"].append(oracle)
    rows = []
    for (dt, n_a), c in sorted(cells.items()):
        mean, se = _mean_se(c["f"])
        rows.append(
            {
                "model": label,
                "t1": plan.t1,
                "dt": dt,
                "n_a": n_a,
                "n_u": n_u,
                "n_m": "exact" if n_m is None else n_m,
                "trials": len(c["f"]),
                "f_max": mean,
                "se_f_max": se,
                "f_max_oracle": float(np.mean(c["oracle"])),
            }
        )
    return rows


def run_global_vs_local(plan: ExperimentPlan) -> list[dict]:
    """The same error sweep with local product unitaries and with global unitaries."""
    variant = Variant(plan.variant)
    n_u_max = max(plan.n_u)
    cells: dict = {}
    for n in plan.n_sites:
        for mode in (Mode.LOCAL, Mode.GLOBAL):
            kernel = HammingKernel(mode.value, 2, n)
            for t in range(plan.trials):
                tr = _prepare(plan, plan.state_family, n, n_u_max, t, mode)
                for n_u in plan.n_u:
                    for n_m in plan.n_m:
                        rep = _estimate(tr, n_u, n_m, None if plan.theory_side else n_m, variant, kernel)
                        cells.setdefault((mode.value, n, n_u, n_m), []).append(abs(rep.f_max - tr.oracle))
    rows = []
    for (mode, n, n_u, n_m), errs in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3] or 0)):
        mean, se = _mean_se(errs)
        rows.append(
            {
                "mode": mode,
                "n_sites": n,
                "n_u": n_u,
                "n_m": "exact" if n_m is None else n_m,
                "trials": len(errs),
                "mean_abs_error": mean,
                "se_error": se,
            }
        )
    return rows


# --------------------------------------------------------------------------
# output


def write_csv(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})


def run_manifest(plan: ExperimentPlan, outputs: dict, elapsed: float, extra: dict | None = None) -> dict:
    import scipy

    return {
        "plan": plan.to_dict(),
        "trial_seeds": [trial_seed(plan.seed, t) for t in range(plan.trials)],
        "outputs": outputs,
        "versions": {
            "xpv": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "protocol": {
            "error_metric": "mean |F_max estimate - oracle F_max| over trials",
            "bisection": f"quarter-octave N_M grid, {plan.hysteresis}-point hysteresis above the accepted value",
        },
        "elapsed_s": round(elapsed, 3),
        **(extra or {}),
    }


def run_study(plan: ExperimentPlan, out_dir) -> dict:
    """Run ``plan``, write ``<study>.csv`` and ``manifest.json`` to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    extra = {}
    if plan.study is Study.ERROR_VS_NM:
        rows = run_error_vs_nm(plan)
        sampled = [r for r in rows if r["n_m"] != "exact"]
        if len({r["n_m"] for r in sampled}) >= 4 and len(plan.n_sites) == 1 and len(plan.n_u) == 1:
            extra["fit"] = asdict(error_slope(rows))
    elif plan.study is Study.BUDGET_EXPONENT:
        fits, rows = run_budget_exponent(plan)
        extra["fits"] = {k: asdict(v) for k, v in fits.items()}
    elif plan.study is Study.NOISE_SWEEP:
        rows = run_noise_sweep(plan)
    elif plan.study is Study.QUENCH_FIDELITY:
        rows = run_quench_fidelity(plan)
    else:
        rows = run_global_vs_local(plan)
    csv_path = out_dir / f"{plan.study.value}.csv"
    write_csv(rows, csv_path)
    manifest = run_manifest(plan, {"table": csv_path.name}, time.perf_counter() - t0, extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    return {"rows": rows, "manifest": manifest}
