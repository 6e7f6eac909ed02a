from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from sfdeinv.disk_spectrum import build_eigensystem
from sfdeinv.mlf import KernelSpec, kernel_primitive, mittag_leffler
from sfdeinv.sfde_forward import (
    KernelGram,
    ModeMoments,
    NonConvergenceError,
    SimConfig,
    SourceSpec,
    analytic_moments,
    bridge_factor,
    brownian_increments,
    exact_gaussian_sample,
    interval_weights,
    kernel_gram,
    l1_mode_solve,
    sample_final_coeffs,
    simulate_ensemble,
)

# mpmath quadrature on a mesh graded toward 0 (oracles.gram_entry_mp), frozen
M11_08 = 0.15399789249383725
M12_08 = 0.10139995070789148


@pytest.fixture(scope="module")
def modes():
    return build_eigensystem(36)


@pytest.fixture(scope="module")
def gram(modes):
    return kernel_gram(SimConfig(), modes)


def _sub_gram(gram, idx):
    idx = np.asarray(idx)
    return KernelGram(gram.d[idx], gram.M[np.ix_(idx, idx)], gram.lam[idx], gram.alpha, gram.T)


def _var_se(var, n):
    # standard error of a Gaussian sample variance
    return var * math.sqrt(2.0 / (n - 1))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(alpha=0.5)
    with pytest.raises(ValueError):
        SimConfig(alpha=1.0)
    with pytest.raises(ValueError):
        SimConfig(n_t=1)
    with pytest.raises(ValueError):
        SimConfig(M=0)


def test_source_validation():
    with pytest.raises(ValueError):
        SourceSpec(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError):
        SourceSpec(np.zeros(3), np.ones(3), h=lambda t: 0.5 + 0 * t, c_h=1.0)
    src = SourceSpec(np.zeros(3), np.ones(3), h=lambda t: 1.0 + t, c_h=1.0)
    assert src.N == 3


def test_moments_validation():
    with pytest.raises(ValueError):
        ModeMoments(np.zeros(2), np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValueError):
        ModeMoments(np.zeros(2), -np.eye(2))


def test_gram_d_matches_primitive(gram):
    exact = np.array([kernel_primitive(KernelSpec(0.8, lm), 0.0, 1.0) for lm in gram.lam])
    assert np.max(np.abs(gram.d - exact)) <= 1e-10


def test_gram_golden_entries(gram):
    assert gram.M[0, 0] == pytest.approx(M11_08, abs=1e-10)
    assert gram.M[0, 1] == pytest.approx(M12_08, abs=1e-10)


def test_gram_structure(gram):
    M = gram.M
    assert np.array_equal(M, M.T)
    w = np.linalg.eigvalsh(M)
    assert w.min() >= -1e-12 * w.max()
    assert np.all(np.diag(M) > 0)
    assert np.all(np.abs(M) <= np.sqrt(np.outer(np.diag(M), np.diag(M))) * (1 + 1e-12))
    # modes sharing an eigenvalue have identical kernels
    assert np.array_equal(M[1], M[2])


def test_gram_variable_profile(modes):
    cfg = SimConfig()
    h = lambda t: 1.0 + np.sin(3.0 * t) ** 2
    g = kernel_gram(cfg, modes[:6], h=h)
    for k in (0, 3, 5):
        lam = g.lam[k]
        # scipy's algebraic-weight QUADPACK rule handles tau**(alpha-1)
        ref, _ = integrate.quad(
            lambda t: mittag_leffler(-lam * t**0.8, 0.8, 0.8) * h(1.0 - t),
            0.0, 1.0, weight="alg", wvar=(-0.2, 0.0), epsabs=1e-13, epsrel=1e-13, limit=200,
        )
        assert g.d[k] == pytest.approx(ref, abs=1e-9)


def test_gram_near_classical_limit(modes):
    g = kernel_gram(SimConfig(alpha=0.999), modes[:3])
    s = g.lam[:, None] + g.lam[None, :]
    classical = (1 - np.exp(-s)) / s
    assert np.max(np.abs(g.M / classical - 1)) < 0.02


def test_gram_nonconvergence(modes):
    with pytest.raises(NonConvergenceError):
        kernel_gram(SimConfig(), modes, n_q=2)


def test_gram_decay_bounds(gram):
    dl = gram.d * gram.lam
    lower = 1 - mittag_leffler(-gram.lam[0], 0.8, 1.0)
    assert np.all(dl >= lower - 1e-12) and np.all(dl <= 1.0)
    scaled = gram.M[0] * gram.lam**0.375
    assert np.all(np.isfinite(scaled)) and scaled.max() < 1.0


def test_analytic_moments_examples(gram):
    f = np.zeros(36)
    f[0] = 1.0
    m = analytic_moments(SourceSpec(f, np.zeros(36)), gram)
    assert np.array_equal(m.covariance, np.zeros((36, 36)))
    expect = np.zeros(36)
    expect[0] = gram.d[0]
    assert np.array_equal(m.expectation, expect)
    g = np.linspace(-3, 4, 36)
    plus = analytic_moments(SourceSpec(f, g), gram)
    minus = analytic_moments(SourceSpec(f, -g), gram)
    assert np.array_equal(plus.covariance, minus.covariance)
    with pytest.raises(ValueError):
        analytic_moments(SourceSpec(np.zeros(3), np.zeros(3)), gram)


def test_interval_weights_telescope(gram):
    cfg = SimConfig(n_t=64)
    W = interval_weights(cfg, gram.lam)
    assert W.shape == (36, 64) and np.all(W >= 0)
    assert np.max(np.abs(W.sum(axis=1) - gram.d)) <= 1e-13


def test_zero_path_gives_mean(gram, modes):
    cfg = SimConfig(n_t=128)
    f = np.zeros(36)
    f[:3] = [10, 5, 12]
    src = SourceSpec(f, np.ones(36))
    u = sample_final_coeffs(src, cfg, np.zeros(128), lam=gram.lam)
    assert np.max(np.abs(u - f * gram.d)) <= 1e-13


def test_sample_is_affine_in_path(gram):
    cfg = SimConfig(n_t=32)
    src = SourceSpec(np.zeros(36), np.linspace(1, 2, 36))
    W = interval_weights(cfg, gram.lam)
    p1, p2 = brownian_increments(cfg, 0), brownian_increments(cfg, 1)
    u = sample_final_coeffs(src, cfg, p1 + p2, weights=W)
    v = sample_final_coeffs(src, cfg, p1, weights=W) + sample_final_coeffs(src, cfg, p2, weights=W)
    assert np.max(np.abs(u - v)) <= 1e-12
    with pytest.raises(ValueError):
        sample_final_coeffs(src, cfg, np.zeros(31), weights=W)


def test_bridge_covariance_is_psd(gram):
    cfg = SimConfig(n_t=256)
    W = interval_weights(cfg, gram.lam)
    C = gram.M - W @ W.T / cfg.dt
    assert np.all(np.diag(C) > 0)
    L = bridge_factor(cfg, gram, W)
    assert np.max(np.abs(L @ L.T - C)) <= 1e-12


def test_single_mode_variance_monte_carlo(gram):
    sub = _sub_gram(gram, [0])
    cfg = SimConfig(n_t=256, M=100_000, seed=11)
    mom = simulate_ensemble(SourceSpec(np.zeros(1), np.array([3.0])), cfg, sub)
    target = 9.0 * sub.M[0, 0]
    assert abs(mom.covariance[0, 0] - target) <= 3 * _var_se(target, cfg.M)


def test_two_mode_correlation(gram):
    sub = _sub_gram(gram, [0, 3])
    cfg = SimConfig(n_t=256, M=20_000, seed=5)
    mom = simulate_ensemble(SourceSpec(np.zeros(2), np.array([2.0, -1.5])), cfg, sub)
    C = mom.covariance
    rho = C[0, 1] / math.sqrt(C[0, 0] * C[1, 1])
    rho0 = -sub.M[0, 1] / math.sqrt(sub.M[0, 0] * sub.M[1, 1])
    assert abs(rho - rho0) <= 3 * (1 - rho0**2) / math.sqrt(cfg.M)


def test_exact_sampler_moments(gram):
    g = np.zeros(36)
    g[:3] = [10, 2, 13]
    f = np.zeros(36)
    f[:3] = [10, 5, 12]
    src = SourceSpec(f, g)
    draws = exact_gaussian_sample(src, gram, seed=4, size=100_000)
    target = analytic_moments(src, gram)
    sd = np.sqrt(np.diag(target.covariance))
    mean_err = np.abs(draws.mean(axis=0) - target.expectation)
    assert np.all(mean_err <= 3 * sd / math.sqrt(1e5) + 1e-14)
    var = draws[:, :4].var(axis=0, ddof=1)
    tv = np.diag(target.covariance)[:4]
    assert np.all(np.abs(var - tv) <= 3 * tv * math.sqrt(2 / 1e5))


def test_exact_sampler_zero_g(gram):
    f = np.arange(36.0)
    src = SourceSpec(f, np.zeros(36))
    assert np.array_equal(exact_gaussian_sample(src, gram, seed=1), f * gram.d)


def test_samplers_agree_ks(gram):
    sub = _sub_gram(gram, [0])
    src = SourceSpec(np.array([10.0]), np.array([10.0]))
    cfg = SimConfig(n_t=4096, M=2000, seed=9, bridge=False)
    W = interval_weights(cfg, sub.lam)
    path_u = np.array([sample_final_coeffs(src, cfg, brownian_increments(cfg, i), weights=W)[0]
                       for i in range(cfg.M)])
    exact_u = exact_gaussian_sample(src, sub, seed=9, size=2000)[:, 0]
    res = stats.ks_2samp(path_u, exact_u)
    assert res.statistic < 1.63 * math.sqrt(2 / 2000)


def test_ensemble_default_size(gram):
    g = np.zeros(36)
    g[:3] = [10, 2, 13]
    f = np.zeros(36)
    f[:3] = [10, 5, 12]
    src = SourceSpec(f, g)
    cfg = SimConfig(n_t=512, M=1000, seed=7)
    mom = simulate_ensemble(src, cfg, gram)
    target = analytic_moments(src, gram)
    tc = target.covariance
    se_mean = np.sqrt(np.diag(tc) / cfg.M)
    assert np.all(np.abs(mom.expectation - target.expectation) <= 5 * se_mean + 1e-14)
    se_cov = np.sqrt((np.outer(np.diag(tc), np.diag(tc)) + tc**2) / (cfg.M - 1))
    assert np.all(np.abs(mom.covariance - tc) <= 5 * se_cov + 1e-14)


def test_ensemble_rejects_single_path(gram):
    src = SourceSpec(np.zeros(36), np.ones(36))
    with pytest.raises(ValueError):
        simulate_ensemble(src, SimConfig(M=1, n_t=16), gram)


def test_ensemble_replay_and_workers(gram):
    src = SourceSpec(np.ones(36), np.linspace(-1, 1, 36))
    a = simulate_ensemble(src, SimConfig(n_t=64, M=600, seed=3), gram)
    b = simulate_ensemble(src, SimConfig(n_t=64, M=600, seed=3), gram)
    c = simulate_ensemble(src, SimConfig(n_t=64, M=600, seed=3, workers=3), gram)
    for other in (b, c):
        assert np.array_equal(a.expectation, other.expectation)
        assert np.array_equal(a.covariance, other.covariance)
    d = simulate_ensemble(src, SimConfig(n_t=64, M=600, seed=4), gram)
    assert not np.array_equal(a.expectation, d.expectation)


def test_sign_invariance_of_ensemble(gram):
    g = np.zeros(36)
    g[:3] = [10, 2, 13]
    f = np.zeros(36)
    f[:3] = [10, 5, 12]
    cfg = SimConfig(n_t=128, M=2000, seed=8)
    plus = simulate_ensemble(SourceSpec(f, g), cfg, gram)
    minus = simulate_ensemble(SourceSpec(f, -g), cfg, gram)
    scale = np.abs(plus.covariance).max()
    assert np.max(np.abs(plus.covariance - minus.covariance)) <= 1e-12 * scale
    # the means differ by twice the sample mean of the noise part
    tc = analytic_moments(SourceSpec(f, g), gram).covariance
    assert np.all(np.abs(plus.expectation - minus.expectation) <= 10 * np.sqrt(np.diag(tc) / cfg.M) + 1e-14)


@pytest.mark.parametrize("n", [1, 5, 20])
def test_ito_isometry(gram, n):
    sub = _sub_gram(gram, [n - 1])
    cfg = SimConfig(n_t=512, M=100_000, seed=100 + n)
    mom = simulate_ensemble(SourceSpec(np.zeros(1), np.array([2.0])), cfg, sub)
    target = 4.0 * sub.M[0, 0]
    assert abs(mom.covariance[0, 0] - target) <= 5 * _var_se(target, cfg.M)


def test_energy_identity(gram):
    g = np.zeros(36)
    g[:3] = [10, 2, 13]
    f = np.zeros(36)
    f[:3] = [10, 5, 12]
    src = SourceSpec(f, g)
    cfg = SimConfig(n_t=256, M=4000, seed=21)
    W = interval_weights(cfg, gram.lam)
    from sfdeinv.sfde_forward import simulate_paths

    U = simulate_paths(src, cfg, W, 0, cfg.M, bridge_factor(cfg, gram, W))
    energy = np.sum(U**2, axis=1)
    target = np.sum(f**2 * gram.d**2 + g**2 * np.diag(gram.M))
    assert abs(energy.mean() - target) <= 4 * energy.std(ddof=1) / math.sqrt(cfg.M)


def test_l1_pure_fractional_integral():
    errs = []
    for n_t in (128, 256, 512, 1024):
        cfg = SimConfig(n_t=n_t)
        y = l1_mode_solve(0.0, 1.0, 0.0, cfg, np.zeros(n_t))
        errs.append(abs(y - 1.0 / math.gamma(1.8)))
        assert errs[-1] <= cfg.dt
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.9)


def test_l1_deterministic_order(gram):
    lam = gram.lam[0]
    exact = gram.d[0]
    errs = [abs(l1_mode_solve(lam, 1.0, 0.0, SimConfig(n_t=n), np.zeros(n)) - exact)
            for n in (64, 128, 256, 512, 1024)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates >= 1.0)


def test_l1_against_path_on_shared_paths(gram):
    # the gap decays like dt**(alpha - 1/2) because of the kernel singularity
    lam = gram.lam[0]
    fine = 2048
    rng = np.random.default_rng(1)
    paths = rng.normal(0.0, math.sqrt(1.0 / fine), (24, fine))
    src = SourceSpec(np.array([10.0]), np.array([10.0]))
    rms = []
    for n_t in (128, 512, 2048):
        cfg = SimConfig(n_t=n_t)
        W = interval_weights(cfg, [lam])
        k = fine // n_t
        gaps = []
        for p in paths:
            dw = p.reshape(n_t, k).sum(axis=1)
            u = sample_final_coeffs(src, cfg, dw, weights=W)[0]
            gaps.append(u - l1_mode_solve(lam, 10.0, 10.0, cfg, dw))
        rms.append(math.sqrt(np.mean(np.square(gaps))))
    assert rms[0] > rms[1] > rms[2]
    assert rms[0] / rms[2] > 4.0 ** 0.3 * 0.8
