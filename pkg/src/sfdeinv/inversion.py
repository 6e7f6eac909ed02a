"""Recovery of ``f`` and ``|g|`` from expectation and covariance data.

``f`` solves a Tikhonov-regularized linear problem; ``g`` is found up to a
global sign by a Levenberg-Marquardt iteration on ``B(g) = C``.  With full
spectral data both have a closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .acquisition import CovarianceOperator, vech
from .disk_spectrum import EigenMode, PolarQuadrature, mode_matrix
from .sfde_forward import KernelGram, ModeMoments, NonConvergenceError

__all__ = [
    "ConditioningReport",
    "LMConfig",
    "LMResult",
    "RankDeficiencyError",
    "ReconstructionResult",
    "TikhonovConfig",
    "closed_form_full",
    "conditioning_report",
    "initial_guess",
    "lm_reconstruct",
    "rel_l2_error",
    "tikhonov_solve",
]


class RankDeficiencyError(np.linalg.LinAlgError):
    """Unregularized least squares with a (numerically) singular matrix."""


@dataclass(frozen=True)
class TikhonovConfig:
    gamma_f: float = 0.0

    def __post_init__(self) -> None:
        if not self.gamma_f >= 0:
            raise ValueError("gamma_f must be nonnegative")


@dataclass(frozen=True)
class LMConfig:
    """Levenberg-Marquardt settings.

    ``init`` is ``"closed-form-diagonal"``, ``"zeros-plus-unit"`` or an
    explicit start vector; ``n0`` is 1-based.  With ``trust_region`` a step
    that raises the residual is rejected and the damping multiplied by 10.
    """

    gamma_g: float = 1e-10
    max_iter: int = 200
    step_tol: float = 1e-8
    init: str | Sequence[float] = "closed-form-diagonal"
    n0: int = 1
    trust_region: bool = False

    def __post_init__(self) -> None:
        if not self.gamma_g > 0:
            raise ValueError("gamma_g must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")
        if self.n0 < 1:
            raise ValueError("n0 is 1-based")
        if isinstance(self.init, str) and self.init not in ("closed-form-diagonal", "zeros-plus-unit"):
            raise ValueError(f"unknown init: {self.init}")


@dataclass
class LMResult:
    g: np.ndarray
    iterations: int
    residual_history: list[float]
    step_history: list[float]
    converged: bool
    iterates: list[np.ndarray] = field(default_factory=list)


@dataclass
class ReconstructionResult:
    f_hat: np.ndarray
    g_hat: np.ndarray
    rel_err_f: float
    rel_err_g_abs: float
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    step_history: list[float] = field(default_factory=list)


def tikhonov_solve(A: np.ndarray, Ehat, cfg: TikhonovConfig) -> np.ndarray:
    """Minimizer of ``|A f - E|^2 + gamma_f |f|^2`` through the SVD of ``A``."""
    A = np.asarray(A, dtype=float)
    E = np.asarray(Ehat, dtype=float)
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite operator")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    gamma = cfg.gamma_f
    if gamma == 0.0:
        if A.shape[0] < A.shape[1] or s.size == 0 or s[-1] < 1e-12 * s[0]:
            raise RankDeficiencyError("operator is rank deficient; use gamma_f > 0")
        filt = 1.0 / s
    else:
        filt = s / (s * s + gamma)
    return Vt.T @ (filt * (U.T @ E))


def initial_guess(op: CovarianceOperator, Chat: np.ndarray, cfg: LMConfig) -> np.ndarray:
    N = op.N
    if not isinstance(cfg.init, str):
        g0 = np.array(cfg.init, dtype=float)
        if g0.shape != (N,):
            raise ValueError("init vector has the wrong length")
        return g0
    if cfg.init == "closed-form-diagonal" and op.sensors.kind == "spectral":
        g0 = np.zeros(N)
        M = op.gram.M
        for col, i in enumerate(op.sensors.indices):
            g0[i - 1] = math.sqrt(max(Chat[col, col], 0.0) / M[i - 1, i - 1])
        return g0
    g0 = np.zeros(N)
    g0[cfg.n0 - 1] = 1.0
    return g0


def lm_reconstruct(
    op: CovarianceOperator,
    Chat,
    cfg: LMConfig,
    keep_iterates: bool = False,
) -> LMResult:
    r"""Levenberg-Marquardt iteration for ``B(g) = Chat``.

    ``g <- g + (J^T J + gamma I)^{-1} J^T vech(Chat - B(g))`` with ``J`` the
    Jacobian of ``B`` in :func:`~sfdeinv.acquisition.vech` coordinates.  The
    loop stops once ``|step| <= step_tol * |g|``; finally the sign is fixed so
    that ``g[n0] >= 0``.
    """
    Chat = np.asarray(Chat, dtype=float)
    if Chat.shape != (op.K, op.K) or not np.array_equal(Chat, Chat.T):
        raise ValueError("Chat must be a symmetric K x K matrix")
    if cfg.n0 > op.N:
        raise ValueError("n0 exceeds the number of modes")
    g = initial_guess(op, Chat, cfg)
    target = vech(Chat)
    eye = np.eye(op.N)

    def residual(gv):
        r = target - vech(op(gv))
        return r, float(np.linalg.norm(r))

    r, rn = residual(g)
    history = [rn]
    steps: list[float] = []
    iterates = [g.copy()] if keep_iterates else []
    gamma = cfg.gamma_g
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        J = op.jacobian(g)
        lhs = J.T @ J + gamma * eye
        try:
            step = np.linalg.solve(lhs, J.T @ r)
        except np.linalg.LinAlgError as exc:
            raise NonConvergenceError(f"LM normal equations failed at iteration {it}") from exc
        g_new = g + step
        r_new, rn_new = residual(g_new)
        if not (np.all(np.isfinite(g_new)) and math.isfinite(rn_new)):
            raise NonConvergenceError(f"non-finite LM residual at iteration {it}")
        if cfg.trust_region and rn_new > rn:
            gamma *= 10.0
            if gamma > 1e300:
                raise NonConvergenceError("LM damping overflowed")
            continue
        if cfg.trust_region:
            gamma = max(cfg.gamma_g, gamma / 10.0)
        sn = float(np.linalg.norm(step))
        gn = float(np.linalg.norm(g))
        g, r, rn = g_new, r_new, rn_new
        history.append(rn)
        steps.append(sn)
        if keep_iterates:
            iterates.append(g.copy())
        if sn <= cfg.step_tol * gn:
            converged = True
            break
    if g[cfg.n0 - 1] < 0:
        g = -g
    return LMResult(g, it, history, steps, converged, iterates)


def closed_form_full(moments: ModeMoments, gram: KernelGram, n0: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Exact recovery from full spectral moments.

    ``f_n = E_n / d_n``; ``g_{n0} = sqrt(V_{n0} / M_{n0 n0})`` and
    ``g_n = C_{n0 n} / (g_{n0} M_{n0 n})``.
    """
    E = np.asarray(moments.expectation, dtype=float)
    C = np.asarray(moments.covariance, dtype=float)
    if E.size != gram.N:
        raise ValueError("moments and Gram sizes differ")
    if not 1 <= n0 <= gram.N:
        raise ValueError("n0 out of range")
    i = n0 - 1
    var = C[i, i]
    if not var > 1e-14:
        raise ValueError(f"variance at mode {n0} is {var:.3g}; g must not vanish on that mode")
    f_hat = E / gram.d
    g0 = math.sqrt(var / gram.M[i, i])
    g_hat = C[i] / (g0 * gram.M[i])
    g_hat[i] = g0
    return f_hat, g_hat


def rel_l2_error(
    truth: Callable | np.ndarray,
    approx_coeffs,
    modes: Sequence[EigenMode],
    quad: PolarQuadrature,
    absolute: bool = False,
) -> float:
    """Relative ``L^2(D)`` error of ``sum_n c_n phi_n`` against ``truth``.

    ``truth`` is a callable ``(r, theta)`` or grid values.  With
    ``absolute`` the moduli are compared pointwise.
    """
    tv = quad.evaluate(truth) if callable(truth) else np.asarray(truth, dtype=float)
    phi = mode_matrix(list(modes), quad)
    av = np.tensordot(np.asarray(approx_coeffs, dtype=float), phi, axes=1)
    if absolute:
        tv, av = np.abs(tv), np.abs(av)
    denom = quad.integrate(tv**2)
    if not denom > 0:
        raise ValueError("truth has zero norm")
    return math.sqrt(quad.integrate((tv - av) ** 2) / denom)


@dataclass(frozen=True)
class ConditioningReport:
    d_scaled: np.ndarray  # d_n lambda_n
    m_scaled: np.ndarray  # M_{n0 n} lambda_n^(1 - 1/(2 alpha))
    exponent: float
    singular_values: np.ndarray
    d_bounded: bool
    m_bounded: bool


def conditioning_report(A: np.ndarray, gram: KernelGram, n0: int = 1, head: int = 5) -> ConditioningReport:
    """Decay of the expectation weights and covariance kernels with ``lambda_n``.

    ``d_n lambda_n`` should stay within ``[0.5 min, 2 max]`` of its first
    ``head`` values and ``M_{n0 n} lambda_n^(1 - 1/(2 alpha))`` should not
    exceed its leading value.
    """
    exponent = 1.0 - 1.0 / (2.0 * gram.alpha)
    d_scaled = gram.d * gram.lam
    m_scaled = gram.M[n0 - 1] * gram.lam**exponent
    lead = d_scaled[:head]
    d_ok = bool(np.all((d_scaled >= 0.5 * lead.min()) & (d_scaled <= 2.0 * lead.max())))
    m_ok = bool(np.all(np.isfinite(m_scaled)) and np.all(m_scaled <= m_scaled[0] * (1 + 1e-12)) and np.all(m_scaled > 0))
    sv = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    return ConditioningReport(d_scaled, m_scaled, exponent, sv, d_ok, m_ok)
