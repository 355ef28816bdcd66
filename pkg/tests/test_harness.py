import csv
import json

import numpy as np
import pytest

from xpv import harness
from xpv.errors import FitRejected
from xpv.harness import ExperimentPlan, Study


def plan(**kw):
    base = dict(study="error_vs_nm", n_sites=(3,), n_u=(20,), n_m=(8, 32), trials=10, seed=1)
    base.update(kw)
    return ExperimentPlan(**base)


def test_plan_validation():
    with pytest.raises(ValueError):
        plan(trials=5)
    with pytest.raises(ValueError):
        plan(n_u=())
    with pytest.raises(ValueError):
        ExperimentPlan.from_dict({"study": "error_vs_nm", "bogus": 1})
    p = ExperimentPlan.from_dict({"study": "error_vs_nm", "n_m": [4, "exact", "inf"], "n_sites": 3})
    assert p.n_m == (4, None, None) and p.n_sites == (3,) and p.study is Study.ERROR_VS_NM
    assert ExperimentPlan.from_dict(p.to_dict()) == p
    assert plan(state_family=("pure_haar_random",)).state_family == ("pure_haar_random", None)


def test_power_law_fit_recovers_exponent():
    x = np.array([32, 64, 128, 256, 512])
    fit = harness.fit_power_law(x, 3.0 * x**-0.9)
    assert fit.exponent == pytest.approx(-0.9) and fit.prefactor == pytest.approx(3.0)
    assert fit.r_squared == pytest.approx(1.0) and fit.require() is fit


def test_exponential_fit_recovers_b():
    n = np.arange(2, 8)
    fit = harness.fit_exponential2(n, 5 * 2 ** (0.8 * n))
    assert fit.exponent == pytest.approx(0.8) and fit.prefactor == pytest.approx(5)


def test_fit_rejection():
    with pytest.raises(FitRejected):
        harness.fit_power_law([1, 2, 4], [1, 0.5, 0.25]).require()
    rng = np.random.default_rng(0)
    with pytest.raises(FitRejected):
        harness.fit_power_law([1, 2, 4, 8, 16], rng.random(5) + 1).require()


def test_n_m_grid():
    g = harness.n_m_grid(64)
    assert g[0] == 2 and g[-1] == 64 and g == sorted(set(g))
    assert 4 in g and 8 in g and 16 in g
    assert all(b / a <= 1.5 for a, b in zip(g, g[1:]))


def test_minimal_n_m_bisection():
    grid = list(range(1, 101))
    calls = []

    def err(n):
        calls.append(n)
        return 1.0 / n

    res = harness.minimal_n_m(err, grid, 0.05)
    assert res["n_m"] == 20 and not res["flagged"]
    assert len(calls) < 15


def test_minimal_n_m_hysteresis_skips_noise_dip():
    grid = list(range(1, 41))
    errs = {n: 1.0 / n for n in grid}
    errs[10] = 0.01  # isolated lucky point below eps
    res = harness.minimal_n_m(lambda n: errs[n], grid, 0.05, hysteresis=2)
    assert res["n_m"] == 20
    assert harness.minimal_n_m(lambda n: 1.0, grid, 0.05)["flagged"]


def test_trial_seeds_distinct_and_stable():
    seeds = [harness.trial_seed(3, t) for t in range(50)]
    assert len(set(seeds)) == 50 and seeds == [harness.trial_seed(3, t) for t in range(50)]


def test_error_vs_nm_rows_reproducible():
    p = plan(n_m=(8, 32, None))
    a, b = harness.run_error_vs_nm(p), harness.run_error_vs_nm(p)
    assert a == b
    by_nm = {r["n_m"]: r for r in a}
    assert set(by_nm) == {8, 32, "exact"}
    assert by_nm[8]["mean_abs_error"] > by_nm[32]["mean_abs_error"] > by_nm["exact"]["mean_abs_error"]
    assert all(r["trials"] == 10 for r in a)


def test_theory_side_has_smaller_error():
    p = plan(n_sites=(4,), n_m=(16,), trials=20)
    two = harness.run_error_vs_nm(p)[0]["mean_abs_error"]
    one = harness.run_theory_experiment_mode(p)[0]["mean_abs_error"]
    assert one < two


def test_exact_vs_exact_error_from_nu_only():
    # identical exact datasets are trivially exact, so use two different states
    fam = ("pure_product", "pure_product")
    rows = harness.run_error_vs_nm(plan(state_family=fam, n_u=(25, 100), n_m=(None,), trials=20))
    e = {r["n_u"]: r["mean_abs_error"] for r in rows}
    assert 1.3 < e[25] / e[100] < 3.0  # ~ sqrt(4)


def test_error_collapse_regime():
    # error * N_M * sqrt(N_U) roughly constant for N_M below D
    rows = harness.run_error_vs_nm(plan(n_sites=(6,), n_u=(30, 120), n_m=(8, 32), trials=15))
    scaled = [r["mean_abs_error"] * r["n_m"] * np.sqrt(r["n_u"]) for r in rows]
    assert max(scaled) / min(scaled) < 2.5


def test_se_shrinks_with_trials():
    se10 = harness.run_error_vs_nm(plan(n_m=(8,), trials=10))[0]["se_error"]
    se40 = harness.run_error_vs_nm(plan(n_m=(8,), trials=40))[0]["se_error"]
    assert 1.2 < se10 / se40 < 3.5  # ~ sqrt(4)


def test_budget_exponent_small():
    p = plan(study="budget_exponent", n_sites=(1, 2, 3, 4), n_u=(30,), trials=10, epsilon=0.1, n_m_max=512)
    fits, rows = harness.run_budget_exponent(p)
    assert len(rows) == 4 and all(not r["flagged"] for r in rows)
    n_m = [r["n_m_min"] for r in rows]
    assert n_m[-1] >= n_m[0]
    assert "pure_product" in fits and fits["pure_product"].n_points == 4


def test_noise_sweep_rows():
    p = plan(study="noise_sweep", n_sites=(3,), n_u=(60,), n_m=(None,), eta2=(0.0, 0.02), trials=10)
    rows = harness.run_noise_sweep(p)
    assert len(rows) == 2
    clean, noisy = rows
    assert clean["f_max"] == pytest.approx(1.0, abs=1e-10)
    assert noisy["f_max"] < clean["f_max"]
    assert noisy["pred_delta_f_max"] == pytest.approx(-0.02 * 3)


def test_quench_identical_platforms_unit_fidelity():
    p = plan(study="quench_fidelity", n_sites=(1, 2, 3), n_u=(40,), n_m=(None,), dt=(0.0,), trials=10, model={"n": 4})
    rows = harness.run_quench_fidelity(p)
    assert [r["n_a"] for r in rows] == [1, 2, 3]
    for r in rows:
        assert r["f_max"] == pytest.approx(1.0, abs=1e-10) and r["f_max_oracle"] == pytest.approx(1.0)
        assert r["model"] == "clean"


def test_quench_monotone_under_noise():
    # oracle first: with depolarization on platform 2 the subsystem fidelity falls with N_A
    p = plan(
        study="quench_fidelity", n_sites=(1, 2, 3, 4), n_u=(200,), n_m=(None,), dt=(0.0,), trials=10,
        model={"n": 4}, noise={"pd2": 0.03},
    )
    rows = harness.run_quench_fidelity(p)
    f = [r["f_max"] for r in rows]
    se = [r["se_f_max"] for r in rows]
    assert all(b <= a + 3 * (sa + sb) for a, b, sa, sb in zip(f, f[1:], se, se[1:]))
    assert f[-1] < f[0]


def test_global_vs_local_rows():
    rows = harness.run_global_vs_local(plan(n_m=(None,), n_u=(30,)))
    assert {r["mode"] for r in rows} == {"local", "global"}


def test_run_study_outputs(tmp_path):
    p = plan(n_sites=(3,), n_m=(4, 8, 16, 32), trials=10)
    out = harness.run_study(p, tmp_path)
    with open(tmp_path / "error_vs_nm.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and "mean_abs_error" in rows[0]
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["plan"]["study"] == "error_vs_nm" and len(man["trial_seeds"]) == 10
    assert "fit" in man and "numpy" in man["versions"]
    assert out["rows"] == harness.run_error_vs_nm(p)
