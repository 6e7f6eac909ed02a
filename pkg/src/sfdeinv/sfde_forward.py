r"""Forward model of the stochastic time-fractional diffusion equation.

In the eigenbasis of the Dirichlet Laplacian the mild solution decouples into
scalar modes

.. math::

    u_n(T) = f_n \int_0^T G_n(T-s) h(s)\,ds + g_n \int_0^T G_n(T-s)\,dW(s),
    \qquad G_n(t) = t^{\alpha-1} E_{\alpha,\alpha}(-\lambda_n t^\alpha),

driven by one scalar Brownian motion shared by all modes.  The final-time
coefficient vector is Gaussian with mean ``f * d`` and covariance
``outer(g, g) * M`` where ``d`` and ``M`` are the kernel integrals assembled by
:func:`kernel_gram`.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .disk_spectrum import EigenMode
from .mlf import KernelSpec, kernel_primitive, mittag_leffler

__all__ = [
    "ConstantProfile",
    "KernelGram",
    "ModeMoments",
    "NonConvergenceError",
    "SimConfig",
    "SourceSpec",
    "analytic_moments",
    "bridge_factor",
    "brownian_increments",
    "exact_gaussian_sample",
    "interval_weights",
    "kernel_gram",
    "l1_mode_solve",
    "simulate_ensemble",
    "simulate_paths",
    "sample_final_coeffs",
]

GRAM_TOL = 1e-9
# paths per work unit; fixed so results do not depend on the worker count
_CHUNK = 256


class NonConvergenceError(RuntimeError):
    """A quadrature or iteration did not reach its tolerance."""


@dataclass(frozen=True)
class ConstantProfile:
    """Temporal profile ``h(t) = value``."""

    value: float = 1.0

    def __call__(self, t):
        return np.full(np.shape(t), self.value) if np.ndim(t) else self.value


@dataclass(frozen=True, eq=False)
class SourceSpec:
    """Eigen-coefficients of ``f`` and ``g`` and the temporal profile ``h``.

    ``h`` must be vectorized and bounded below by ``c_h > 0``; this is checked
    on a sample grid over ``[0, T]``.
    """

    f_coeffs: np.ndarray
    g_coeffs: np.ndarray
    h: Callable = field(default_factory=ConstantProfile)
    c_h: float = 1.0
    T: float = 1.0

    def __post_init__(self) -> None:
        f = np.asarray(self.f_coeffs, dtype=float).copy()
        g = np.asarray(self.g_coeffs, dtype=float).copy()
        if f.ndim != 1 or f.shape != g.shape:
            raise ValueError("f_coeffs and g_coeffs must be vectors of equal length")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise ValueError("non-finite source coefficients")
        if not self.c_h > 0:
            raise ValueError("c_h must be positive")
        ts = np.linspace(0.0, self.T, 257)
        hv = np.asarray(self.h(ts), dtype=float)
        if np.any(hv < self.c_h * (1 - 1e-12)):
            raise ValueError("h falls below its stated lower bound c_h")
        f.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "f_coeffs", f)
        object.__setattr__(self, "g_coeffs", g)

    @property
    def N(self) -> int:
        return self.f_coeffs.size

    def with_g(self, g) -> SourceSpec:
        return SourceSpec(self.f_coeffs, g, self.h, self.c_h, self.T)

    def with_f(self, f) -> SourceSpec:
        return SourceSpec(f, self.g_coeffs, self.h, self.c_h, self.T)


@dataclass(frozen=True)
class SimConfig:
    alpha: float = 0.8
    T: float = 1.0
    N: int = 36
    n_t: int = 2048
    M: int = 1000
    seed: int = 0
    workers: int = 1
    # add the part of the Ito integral not seen by the increments
    bridge: bool = True

    def __post_init__(self) -> None:
        if not 0.5 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (1/2, 1): {self.alpha}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.n_t < 2:
            raise ValueError("n_t must be at least 2")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    @property
    def dt(self) -> float:
        return self.T / self.n_t


@dataclass(frozen=True)
class ModeMoments:
    """Mean vector and covariance matrix of the final-time coefficients."""

    expectation: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        e = np.asarray(self.expectation, dtype=float)
        c = np.asarray(self.covariance, dtype=float)
        if c.shape != (e.size, e.size):
            raise ValueError("covariance shape does not match expectation")
        if not np.array_equal(c, c.T):
            raise ValueError("covariance must be symmetric")
        if np.any(np.diag(c) < 0):
            raise ValueError("negative variance")
        object.__setattr__(self, "expectation", e)
        object.__setattr__(self, "covariance", c)


@dataclass(frozen=True)
class KernelGram:
    r"""``d_k = int_0^T G_k(tau) h(T - tau) dtau`` and
    ``M_kl = int_0^T G_k(tau) G_l(tau) dtau``."""

    d: np.ndarray
    M: np.ndarray
    lam: np.ndarray
    alpha: float
    T: float

    @property
    def N(self) -> int:
        return self.d.size


def _graded_rule(length: float, n_q: int, ratio_floor: float = 1e-15):
    """Composite Gauss-Legendre on ``[0, length]`` with panels halving toward 0."""
    x, w = np.polynomial.legendre.leggauss(n_q)
    npan = int(math.ceil(math.log2(1.0 / ratio_floor)))
    edges = np.concatenate([[0.0], length * 2.0 ** -np.arange(npan, -1, -1)])
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def _gram_pass(alpha, T, lam, h, n_q):
    # d: s = tau**alpha, dtau = s**(1/alpha - 1) ds / alpha
    s, ws = _graded_rule(T**alpha, n_q)
    tau = s ** (1.0 / alpha)
    ev = mittag_leffler(-np.outer(lam, s), alpha, alpha)
    hv = np.asarray(h(T - tau), dtype=float) * np.ones_like(tau)
    d = ev @ (ws * hv) / alpha
    # M: s = tau**(2 alpha - 1) absorbs tau**(2 alpha - 2)
    p = 2.0 * alpha - 1.0
    s, ws = _graded_rule(T**p, n_q)
    tau = s ** (1.0 / p)
    ev = mittag_leffler(-np.outer(lam, tau**alpha), alpha, alpha)
    M = (ev * (ws / p)) @ ev.T
    M = 0.5 * (M + M.T)
    return d, M


def kernel_gram(
    config: SimConfig,
    modes: Sequence[EigenMode],
    h: Callable | None = None,
    n_q: int = 16,
) -> KernelGram:
    """Assemble ``d`` and ``M`` by power substitution and graded Gauss-Legendre.

    The rule is applied with ``n_q`` and ``2 n_q`` nodes per panel; the finer
    result is returned and :class:`NonConvergenceError` is raised if any entry
    moved by more than ``1e-9``.
    """
    h = ConstantProfile() if h is None else h
    lam = np.array([md.lam for md in modes], dtype=float)
    alpha, T = config.alpha, config.T
    d0, M0 = _gram_pass(alpha, T, lam, h, n_q)
    d1, M1 = _gram_pass(alpha, T, lam, h, 2 * n_q)
    change = max(np.max(np.abs(d1 - d0)), np.max(np.abs(M1 - M0)))
    if not change <= GRAM_TOL:
        raise NonConvergenceError(f"kernel Gram quadrature changed by {change:.3g} on refinement")
    if np.any(d1 <= 0):
        raise NonConvergenceError("non-positive expectation weight")
    return KernelGram(d1, M1, lam, alpha, T)


def analytic_moments(source: SourceSpec, gram: KernelGram) -> ModeMoments:
    """Exact moments: mean ``f * d``, covariance ``outer(g, g) * M``."""
    if source.N != gram.N:
        raise ValueError("source and Gram sizes differ")
    g = source.g_coeffs
    return ModeMoments(source.f_coeffs * gram.d, np.outer(g, g) * gram.M)


def interval_weights(config: SimConfig, lam: np.ndarray) -> np.ndarray:
    """``W[n, j] = int G_n(T - s) ds`` over the ``j``-th source interval.

    Shape ``(N, n_t)``; rows telescope to ``kernel_primitive(0, T)``.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    t = np.linspace(0.0, config.T, config.n_t + 1)
    lag = config.T - t  # decreasing
    out = np.empty((lam.size, config.n_t))
    for i, lm in enumerate(lam):
        spec = KernelSpec(config.alpha, lm, config.T)
        out[i] = kernel_primitive(spec, lag[1:], lag[:-1])
    return out


def brownian_increments(config: SimConfig, i: int) -> np.ndarray:
    """Increments of path ``i``, drawn from the substream ``(seed, i)``."""
    ss = np.random.SeedSequence(config.seed, spawn_key=(0, i))
    return np.random.default_rng(ss).normal(0.0, math.sqrt(config.dt), config.n_t)


def _forcing_profile(source: SourceSpec, config: SimConfig) -> np.ndarray:
    mid = (np.arange(config.n_t) + 0.5) * config.dt
    return np.asarray(source.h(mid), dtype=float) * np.ones(config.n_t)


def _check_dims(source: SourceSpec, config: SimConfig, weights: np.ndarray) -> None:
    if weights.shape != (source.N, config.n_t):
        raise ValueError("weights do not match source size and time grid")
    if abs(source.T - config.T) > 1e-14 * config.T:
        raise ValueError("source and config disagree on T")


def sample_final_coeffs(
    source: SourceSpec,
    config: SimConfig,
    path: np.ndarray,
    weights: np.ndarray | None = None,
    lam: np.ndarray | None = None,
) -> np.ndarray:
    """Mild solution ``u_n(T)`` on one Brownian path.

    ``path`` holds ``n_t`` increments.  Give either precomputed ``weights``
    (from :func:`interval_weights`) or the eigenvalues ``lam``.
    """
    path = np.asarray(path, dtype=float)
    if path.shape != (config.n_t,):
        raise ValueError(f"path must have {config.n_t} increments")
    if weights is None:
        if lam is None:
            raise ValueError("need weights or lam")
        weights = interval_weights(config, lam)
    _check_dims(source, config, weights)
    det = weights @ _forcing_profile(source, config)
    sto = weights @ path / config.dt
    return source.f_coeffs * det + source.g_coeffs * sto


def _symmetric_factor(C: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = C`` for a positive semidefinite ``C``.

    Cholesky is tried first (once more with a ``1e-14 trace / N`` jitter), then
    a clipped eigendecomposition for rank-deficient matrices.
    """
    n = C.shape[0]
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-14 * np.trace(C) / n
    try:
        return np.linalg.cholesky(C + jitter * np.eye(n))
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(C)
    if w.min() < -1e-10 * max(w.max(), 0.0):
        raise NonConvergenceError("matrix is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def bridge_factor(config: SimConfig, gram: KernelGram, weights: np.ndarray) -> np.ndarray:
    """Factor of ``M - W W^T / dt``, the covariance of the Ito integrals of the
    kernel components orthogonal to piecewise constants.

    That part is independent of the increments, so adding it with fresh
    normals makes path draws exact in distribution.
    """
    C = gram.M - (weights @ weights.T) / config.dt
    return _symmetric_factor(0.5 * (C + C.T))


def simulate_paths(
    source: SourceSpec,
    config: SimConfig,
    weights: np.ndarray,
    start: int = 0,
    count: int | None = None,
    bridge: np.ndarray | None = None,
) -> np.ndarray:
    """Final-time coefficients of paths ``start .. start+count-1``, shape ``(count, N)``.

    With ``bridge`` (from :func:`bridge_factor`) each path also receives the
    independent remainder of its Ito integral.
    """
    _check_dims(source, config, weights)
    count = config.M - start if count is None else count
    det = source.f_coeffs * (weights @ _forcing_profile(source, config))
    idx = range(start, start + count)
    dw = np.stack([brownian_increments(config, i) for i in idx])
    sto = (dw @ weights.T) / config.dt
    if bridge is not None:
        xi = np.stack([_bridge_normals(config, i, source.N) for i in idx])
        sto = sto + xi @ bridge.T
    return det + sto * source.g_coeffs


def _bridge_normals(config: SimConfig, i: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence(config.seed, spawn_key=(3, i))
    return np.random.default_rng(ss).standard_normal(n)


def simulate_ensemble(
    source: SourceSpec,
    config: SimConfig,
    gram: KernelGram,
    weights: np.ndarray | None = None,
) -> ModeMoments:
    """Sample mean and unbiased sample covariance over ``config.M`` paths.

    Paths are processed in fixed chunks and reduced in path order, so the
    result is bit-identical for any ``config.workers``.
    """
    if config.M < 2:
        raise ValueError("an empirical covariance needs M >= 2 realizations")
    if gram.N != source.N:
        raise ValueError("source and Gram sizes differ")
    if weights is None:
        weights = interval_weights(config, gram.lam)
    bridge = bridge_factor(config, gram, weights) if config.bridge else None
    starts = list(range(0, config.M, _CHUNK))

    def run(s):
        return simulate_paths(source, config, weights, s, min(_CHUNK, config.M - s), bridge)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            chunks = list(pool.map(run, starts))
    else:
        chunks = [run(s) for s in starts]
    U = np.concatenate(chunks)
    mean = U.mean(axis=0)
    C = U - mean
    cov = (C.T @ C) / (config.M - 1)
    cov = 0.5 * (cov + cov.T)
    return ModeMoments(mean, cov)


def exact_gaussian_sample(
    source: SourceSpec,
    gram: KernelGram,
    seed: int,
    size: int | None = None,
) -> np.ndarray:
    """Exact draws of the final-time coefficient vector.

    Uses the factor ``diag(g) L`` with ``L L^T = M``.  ``M`` is singular
    whenever two modes share an eigenvalue (their kernels coincide), so the
    factorization falls back to a clipped eigendecomposition.
    Returns shape ``(N,)`` or ``(size, N)``.
    """
    mom = analytic_moments(source, gram)
    L = _symmetric_factor(gram.M)
    factor = source.g_coeffs[:, None] * L
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, 0)))
    xi = rng.standard_normal(source.N if size is None else (size, source.N))
    if size is None:
        return mom.expectation + factor @ xi
    return mom.expectation + xi @ factor.T


def l1_mode_solve(
    mode: EigenMode | float,
    f_n: float,
    g_n: float,
    config: SimConfig,
    path: np.ndarray,
    h: Callable | None = None,
) -> float:
    r"""L1 time stepping for ``D^alpha y + lambda y = f_n h(t) + g_n dW/dt``, ``y(0) = 0``.

    The Caputo derivative at ``t_k`` is approximated by
    ``dt^-alpha / Gamma(2 - alpha) * sum_j b_j (y_{k-j} - y_{k-j-1})`` with
    ``b_j = (j+1)^(1-alpha) - j^(1-alpha)``; ``lambda y`` is implicit and the
    forcing on ``(t_{k-1}, t_k]`` is ``f_n h(t_k) + g_n dW_k / dt``.
    """
    lam = mode.lam if isinstance(mode, EigenMode) else float(mode)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    h = ConstantProfile() if h is None else h
    path = np.asarray(path, dtype=float)
    n, dt, a = config.n_t, config.dt, config.alpha
    if path.shape != (n,):
        raise ValueError(f"path must have {n} increments")
    j = np.arange(n + 1, dtype=float)
    b = (j[1:] ** (1 - a) - j[:-1] ** (1 - a))[:n]
    c = dt ** (-a) / math.gamma(2 - a)
    tk = np.arange(1, n + 1) * dt
    F = f_n * np.asarray(h(tk), dtype=float) * np.ones(n) + g_n * path / dt
    # history of increments y_{i} - y_{i-1}, oldest first
    dy = np.zeros(n)
    y = 0.0
    for k in range(1, n + 1):
        # sum_{j=1}^{k-1} b_j (y_{k-j} - y_{k-j-1}) = b[1:k] . dy[k-2::-1]
        hist = b[1:k] @ dy[k - 2 :: -1] if k > 1 else 0.0
        ynew = (F[k - 1] + c * (y - hist)) / (c + lam)
        dy[k - 1] = ynew - y
        y = ynew
    return y
