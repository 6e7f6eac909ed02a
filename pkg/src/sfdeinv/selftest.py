"""Reduced invariant checks for every module, meant to finish well under a minute."""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from . import mlf
from .acquisition import (
    CovarianceOperator,
    ObservationDomain,
    apply_B,
    build_R,
    frechet_B,
    partition_domain,
    spectral_basis,
)
from .disk_spectrum import build_eigensystem, make_quadrature, mode_matrix
from .inversion import LMConfig, closed_form_full, lm_reconstruct, tikhonov_solve, TikhonovConfig
from .sfde_forward import (
    KernelGram,
    SimConfig,
    SourceSpec,
    analytic_moments,
    kernel_gram,
    simulate_ensemble,
)


def _suite_mlf(rng) -> None:
    x = np.linspace(-10.0, 2.0, 1000)
    assert np.max(np.abs(mlf.mittag_leffler(x, 1.0, 1.0) - np.exp(x))) <= 1e-12
    z = np.linspace(0.0, 5.0, 200)
    assert np.max(np.abs(mlf.mittag_leffler(-(z**2), 2.0, 1.0) - np.cos(z))) <= 1e-11


def _suite_derivative(rng) -> None:
    for alpha in (0.6, 0.8):
        for lam in (1.0, 10.0, 100.0):
            t = np.linspace(0.1, 1.0, 52)[1:-1]
            eps = 1e-5 * t
            fd = (mlf.mittag_leffler(-lam * (t + eps) ** alpha, alpha)
                  - mlf.mittag_leffler(-lam * (t - eps) ** alpha, alpha)) / (2 * eps)
            exact = -lam * t ** (alpha - 1) * mlf.mittag_leffler(-lam * t**alpha, alpha, alpha)
            assert np.max(np.abs(fd / exact - 1)) <= 1e-5


def _suite_spectrum(rng) -> None:
    quad = make_quadrature()
    modes = build_eigensystem(36, quad)
    assert abs(modes[0].lam - 5.783185962946785) <= 1e-9
    phi = mode_matrix(modes, quad).reshape(36, -1)
    gram = (phi * quad.weights.ravel()) @ phi.T
    assert np.max(np.abs(gram - np.eye(36))) <= 1e-7


def _small_gram(n: int = 6, alpha: float = 0.8) -> tuple[list, KernelGram]:
    modes = build_eigensystem(n)
    return modes, kernel_gram(SimConfig(alpha=alpha, N=n), modes)


def _suite_forward(rng, seed: int) -> None:
    modes, gram = _small_gram()
    exact = np.array([mlf.kernel_primitive(mlf.KernelSpec(0.8, lm), 0.0, 1.0) for lm in gram.lam])
    assert np.max(np.abs(gram.d - exact)) <= 1e-10
    g = np.array([3.0, -1.0, 2.0, 0.0, 0.5, 0.0])
    src = SourceSpec(np.zeros(6), g)
    cfg = SimConfig(n_t=128, M=20_000, seed=seed, N=6)
    mom = simulate_ensemble(src, cfg, gram)
    target = analytic_moments(src, gram).covariance
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / (cfg.M - 1))
    assert np.all(np.abs(mom.covariance - target) <= 5 * se + 1e-15)


def _suite_acquisition(rng) -> None:
    modes, gram = _small_gram()
    cells = partition_domain(ObservationDomain.annulus(0.75, 1.0), 2, 8)
    assert abs(sum(c.area for c in cells) - math.pi * 7 / 16) <= 1e-10
    sensors = build_R(cells, modes)
    g = rng.standard_normal(6)
    h = rng.standard_normal(6)
    base = apply_B(sensors, gram, g)
    deriv = frechet_B(sensors, gram, g, h)
    errs = [np.linalg.norm(apply_B(sensors, gram, g + e * h) - base - e * deriv) for e in (1e-3, 1e-4)]
    assert 80 < errs[0] / errs[1] < 120
    assert np.array_equal(apply_B(sensors, gram, -g), base)


def _suite_inversion(rng) -> None:
    modes, gram = _small_gram()
    f = np.array([10.0, 5.0, 12.0, 0, 0, 0])
    g = np.array([10.0, 2.0, 13.0, 0, 0, 0])
    mom = analytic_moments(SourceSpec(f, g), gram)
    fh, gh = closed_form_full(mom, gram)
    assert np.max(np.abs(fh - f)) <= 1e-8 * 16 and np.max(np.abs(gh - g)) <= 1e-8 * 17
    A = np.diag(gram.d)
    assert np.max(np.abs(tikhonov_solve(A, mom.expectation, TikhonovConfig(0.0)) - f)) <= 1e-9
    op = CovarianceOperator(spectral_basis(6), gram)
    start = g + 0.1 * rng.standard_normal(6)
    a = lm_reconstruct(op, mom.covariance, LMConfig(1e-14, init=tuple(start), max_iter=5), keep_iterates=True)
    b = lm_reconstruct(op, mom.covariance, LMConfig(1e-14, init=tuple(-start), max_iter=5), keep_iterates=True)
    for x, y in zip(a.iterates, b.iterates):
        assert np.array_equal(x, -y)


SUITES: list[tuple[str, Callable]] = [
    ("mittag-leffler", lambda rng, seed: _suite_mlf(rng)),
    ("derivative-identity", lambda rng, seed: _suite_derivative(rng)),
    ("spectrum", lambda rng, seed: _suite_spectrum(rng)),
    ("forward-moments", _suite_forward),
    ("acquisition", lambda rng, seed: _suite_acquisition(rng)),
    ("inversion", lambda rng, seed: _suite_inversion(rng)),
]


def run_selftest(seed: int = 0, out=print) -> bool:
    ok = True
    for name, fn in SUITES:
        t0 = time.perf_counter()
        rng = np.random.default_rng(seed)
        try:
            fn(rng, seed)
            status = "PASS"
        except AssertionError:
            status = "FAIL"
            ok = False
        except Exception as exc:  # a crash is a failure of that suite
            status = f"ERROR ({type(exc).__name__}: {exc})"
            ok = False
        out(f"{name:<22s} {status}  {time.perf_counter() - t0:.2f}s")
    return ok
