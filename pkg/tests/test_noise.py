import numpy as np
import pytest

from conftest import random_density
from xpv import measure, noise, qcore, randsrc
from xpv.errors import ChannelError, Unsupported
from xpv.estimate import estimate_fidelities, estimate_overlap
from xpv.noise import NoiseProfile
from xpv.qcore import DensityMatrix, PureState, StateSpec
from xpv.randsrc import SchedulePlan


def test_profile_validation():
    with pytest.raises(ValueError):
        NoiseProfile(eta=-1)
    assert NoiseProfile().is_clean and not NoiseProfile(p_depol=0.01).is_clean


def test_perturb_unitary():
    sched = randsrc.sample_schedule(SchedulePlan(1, 3, master_seed=1))
    u = sched[0]
    assert noise.perturb_unitary(u, NoiseProfile(0.0), 0) is u
    for eta in (1e-3, 2e-3):
        v = noise.perturb_unitary(u, NoiseProfile(eta, seed=4), 0)
        for f in v.factors:
            assert np.abs(f.conj().T @ f - np.eye(2)).max() < 1e-10
    d1 = np.linalg.norm(noise.perturb_unitary(u, NoiseProfile(1e-3, seed=4), 0).factors - u.factors)
    d2 = np.linalg.norm(noise.perturb_unitary(u, NoiseProfile(2e-3, seed=4), 0).factors - u.factors)
    assert d2 / d1 == pytest.approx(2.0, rel=1e-2)
    # right multiplication: U V, with V from the noise stream of (platform, u, k)
    v = noise.perturb_unitary(u, NoiseProfile(0.3, seed=4), 0)
    expected = u.factors[1] @ noise._expm_i_hermitian(
        randsrc.sample_gue(2, randsrc.stream(4, randsrc.TAG_NOISE, 0, 0, 1)), 0.3
    )
    assert np.allclose(v.factors[1], expected)


def test_perturbations_independent_across_sites():
    h = np.array([noise._perturbations(2, 2, 1.0, 7, 0, u) for u in range(10_000)])
    a, b = h[:, 0, 0, 1], h[:, 1, 0, 1]
    c = np.mean(a * np.conj(b)) - np.mean(a) * np.conj(np.mean(b))
    assert abs(c) < 4 * np.std(a * np.conj(b)) / 100


def test_perturb_schedule_global_unsupported():
    g = randsrc.sample_schedule(SchedulePlan(2, 2, mode="global"))
    assert noise.perturb_schedule(g, NoiseProfile()) is g
    with pytest.raises(Unsupported):
        noise.perturb_schedule(g, NoiseProfile(0.1))


def test_depolarize_examples():
    rho = random_density(3, np.random.default_rng(0))
    assert noise.depolarize(rho, 0.0) is rho
    mm = DensityMatrix.maximally_mixed(3)
    assert np.allclose(noise.depolarize(mm, 0.1).matrix, mm.matrix, atol=1e-14)
    out = noise.depolarize(PureState.basis([0]).to_density(), 0.1)
    assert np.allclose(out.matrix, 0.8 * np.diag([1, 0]) + 0.2 * np.eye(2) / 2)
    # the stated channel gives diag(0.9, 0.1), whose purity is 0.82
    assert qcore.purity(out) == pytest.approx(0.82, abs=1e-14)
    with pytest.raises(ChannelError):
        noise.depolarize(rho, 1 / 6)


def test_depolarize_trace_preserving_and_local():
    rho = random_density(3, np.random.default_rng(1))
    out = noise.depolarize(rho, 0.05)
    assert np.trace(out.matrix).real == pytest.approx(1, abs=1e-12)
    assert np.allclose(out.matrix, out.matrix.conj().T)
    # oracle via explicit partial trace and embedding at site 1
    red = qcore.partial_trace(rho, [0, 2]).matrix.reshape(2, 2, 2, 2)
    emb = np.einsum("acbd,ef->aecbfd", red, np.eye(2) / 2).reshape(8, 8)
    site = noise._single_site_reduced_sum(rho)
    other = site - emb
    assert np.trace(other).real == pytest.approx(2.0, abs=1e-12)


def test_predict_examples():
    psi = qcore.build_pure(StateSpec("pp", 4, seed=1))
    zero = noise.predict_fidelity_shift(psi, psi, NoiseProfile(), NoiseProfile())
    assert zero["delta_f_gm"] == 0 and zero["delta_f_max"] == 0
    shift = noise.predict_fidelity_shift(psi, psi, NoiseProfile(), NoiseProfile(eta=0.1))
    assert shift["delta_f_gm"] == pytest.approx(-0.04) and shift["delta_f_max"] == pytest.approx(-0.04)
    dep = noise.predict_fidelity_shift(psi, psi, NoiseProfile(), NoiseProfile(p_depol=0.01))
    assert dep["delta_f_gm"] == 0 and dep["delta_f_max"] == pytest.approx(0.01 * (-8 + 4))
    with pytest.raises(Unsupported):
        noise.predict_fidelity_shift(psi, qcore.build_pure(StateSpec("pp", 4, seed=2)), NoiseProfile(), NoiseProfile())


def test_predicted_depol_slope_matches_oracle():
    # exact oracle fidelities of (rho, depolarize(rho)) against the first-order prediction
    rho = random_density(3, np.random.default_rng(2), rank=2)
    p = 1e-4
    noisy = noise.depolarize(rho, p)
    pred = noise.predict_fidelity_shift(rho, rho, NoiseProfile(), NoiseProfile(p_depol=p))
    assert qcore.fidelity_max(rho, noisy) - 1 == pytest.approx(pred["delta_f_max"], rel=1e-3)
    assert abs(qcore.fidelity_gm(rho, noisy) - 1) < 1e-6


def test_zero_profiles_match_clean():
    psi = qcore.build_pure(StateSpec("pp", 3, seed=1))
    sched = randsrc.sample_schedule(SchedulePlan(20, 3, master_seed=1))
    a, b = noise.simulate_imperfect_protocol((psi, psi), sched, (NoiseProfile(), NoiseProfile()), 30, seed=5)
    assert np.array_equal(a.data, measure.acquire_dataset(psi, sched, 30, 5, platform=0).data)
    assert np.array_equal(b.data, measure.acquire_dataset(psi, sched, 30, 5, platform=1).data)
    assert a.schedule_ref == sched.ref


def _noisy_fid(n, prof2, n_u=500, seed=0, prof1=NoiseProfile()):
    psi = qcore.build_pure(StateSpec("pp", n, seed=seed))
    sched = randsrc.sample_schedule(SchedulePlan(n_u, n, master_seed=seed))
    a, b = noise.simulate_imperfect_protocol((psi, psi), sched, (prof1, prof2), None)
    return estimate_fidelities(a, b), psi


def test_unitary_error_matches_prediction():
    drops, preds = [], []
    for e2 in (0.01, 0.03, 0.05):
        rep, psi = _noisy_fid(4, NoiseProfile(eta=np.sqrt(e2), seed=3))
        drops.append(1 - rep.f_max)
        preds.append(-noise.predict_fidelity_shift(psi, psi, NoiseProfile(), NoiseProfile(eta=np.sqrt(e2)))["delta_f_max"])
    slope = np.polyfit([0.01, 0.03, 0.05], drops, 1)[0]
    assert slope == pytest.approx(4, rel=0.2)  # 2N - N for pure product states
    assert np.allclose(drops, preds, rtol=0.2)


def test_depolarization_hits_f_max_only():
    rep, _ = _noisy_fid(4, NoiseProfile(p_depol=0.02))
    assert 1 - rep.f_max > 0.05
    assert abs(1 - rep.f_gm) < (1 - rep.f_max) / 5


def test_purity_unaffected_by_unitary_errors():
    psi = qcore.build_pure(StateSpec("pr", 3, seed=2))
    sched = randsrc.sample_schedule(SchedulePlan(300, 3, master_seed=2))
    clean = measure.acquire_dataset(psi, sched, None)
    noisy, _ = noise.simulate_imperfect_protocol((psi, psi), sched, (NoiseProfile(0.2, seed=1), NoiseProfile()), None)
    a, b = estimate_overlap(clean, clean), estimate_overlap(noisy, noisy)
    assert a == pytest.approx(1.0, abs=0.15) and b == pytest.approx(1.0, abs=0.15)


def test_shift_scales_with_n():
    e2 = 0.02
    shifts = [1 - _noisy_fid(n, NoiseProfile(eta=np.sqrt(e2), seed=4), n_u=400)[0].f_max for n in (2, 4, 6)]
    slope = np.polyfit([2, 4, 6], shifts, 1)[0]
    assert slope == pytest.approx(e2, rel=0.25)


def test_no_false_positives_small_sample():
    fids = []
    for t in range(10):
        rep, _ = _noisy_fid(3, NoiseProfile(eta=0.1, p_depol=0.02, seed=t), n_u=100, seed=t, prof1=NoiseProfile(eta=0.05, seed=t + 50))
        fids.append(rep.f_max)
    assert np.mean(fids) <= 1 + 3 * np.std(fids) / np.sqrt(len(fids))
