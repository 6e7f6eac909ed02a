r"""Mittag-Leffler functions on the real line and the fractional relaxation kernel.

The two-parameter Mittag-Leffler function

.. math::

    E_{\alpha,\beta}(x) = \sum_{k=0}^\infty \frac{x^k}{\Gamma(\alpha k + \beta)}

is evaluated with three branches:

* the power series (compensated summation) wherever it is free of severe
  cancellation, i.e. for :math:`x \ge 0` and for small negative arguments;
* for :math:`0 < \alpha < 1` and moderate negative arguments, the real integral
  representation of Gorenflo, Loutchko and Luchko, discretized with the
  trapezoidal rule in logarithmic variables (exponentially convergent);
* for large negative arguments, the algebraic asymptotic expansion with an
  adaptively chosen number of terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "KernelSpec",
    "MLOrder",
    "kernel",
    "kernel_primitive",
    "mittag_leffler",
    "ml",
    "rgamma",
]

# magnitude of sum |c_k| |x|^k tolerated on the series branch for x < 0
SERIES_CANCELLATION_LIMIT = 1.0e2
# asymptotic expansion is only used for x <= -ASYMPTOTIC_THRESHOLD
ASYMPTOTIC_THRESHOLD = 25.0
# number of e-folds the neglected exponentially small part must be below
_STOKES_EFOLDS = 40.0
# chunking for the integral branch (rows x nodes)
_MAX_BLOCK = 2_000_000


@dataclass(frozen=True)
class MLOrder:
    """Parameters :math:`(\\alpha, \\beta)` of :math:`E_{\\alpha,\\beta}`."""

    alpha: float
    beta: float = 1.0

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive: {self.alpha}")


@dataclass(frozen=True)
class KernelSpec:
    r"""Kernel :math:`t^{\alpha-1} E_{\alpha,\alpha}(-\lambda t^\alpha)` on :math:`(0, T]`."""

    alpha: float
    lam: float
    T: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1]: {self.alpha}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive: {self.lam}")
        if not self.T > 0:
            raise ValueError(f"T must be positive: {self.T}")


def rgamma(x: float) -> float:
    """Reciprocal gamma function, zero at the poles of :math:`\\Gamma`."""
    if x <= 0 and abs(x - round(x)) < 1e-12 * max(1.0, abs(x)):
        return 0.0
    if x > 171.0:
        return math.exp(-math.lgamma(x))
    if x < 0.5:
        # reflection keeps the result finite for large negative x
        if 1.0 - x > 171.0:
            return math.copysign(math.inf, math.sin(math.pi * x))
        return math.sin(math.pi * x) * math.gamma(1.0 - x) / math.pi
    return 1.0 / math.gamma(x)


@lru_cache(maxsize=64)
def _series_coefficients(alpha: float, beta: float, nterms: int) -> np.ndarray:
    return np.array([rgamma(alpha * k + beta) for k in range(nterms)])


def _series(x: np.ndarray, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Compensated power series; returns the value and sum |c_k x^k|."""
    ax = np.abs(x)
    amax = float(ax.max(initial=0.0))
    # terms decay once alpha k > amax**(1/alpha); 40 extra terms cover 1e-17
    nterms = int(math.ceil(3.0 * amax ** (1.0 / alpha) / alpha)) + 40
    nterms = min(max(nterms, 40), 4000)
    coef = _series_coefficients(alpha, beta, nterms)

    total = np.full_like(x, coef[0])
    comp = np.zeros_like(x)
    bound = np.full_like(x, abs(coef[0]))
    logx = np.log(np.where(ax > 0, ax, 1.0))
    sign = np.where(x < 0, -1.0, 1.0)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        for k in range(1, nterms):
            ck = coef[k]
            if ck == 0.0:
                continue
            if abs(ck) > 1e-290:
                mag = abs(ck) * ax**k
            else:
                mag = np.exp(k * logx - math.lgamma(alpha * k + beta))
            term = math.copysign(1.0, ck) * mag * sign**k
            # Neumaier summation
            t = total + term
            comp += np.where(np.abs(total) >= np.abs(term), (total - t) + term, (term - t) + total)
            total = t
            bound += mag
            if k > 8 and np.all(mag <= 1e-18 * np.maximum(bound, 1e-300)):
                break
    return total + comp, bound


def _integral(t: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    r"""Trapezoidal rule for :math:`E_{\alpha,\beta}(-t)`, :math:`0<\alpha<1`, :math:`t \ge 1`.

    Uses :math:`E_{\alpha,\beta}(-t) = \int_0^\infty K(\chi)\,d\chi` with
    :math:`\chi = e^u`; the integrand is analytic in a strip of half-width
    :math:`\min(\pi(1-\alpha), \alpha\pi/2)` around the real axis.
    """
    sa = math.sin(alpha * math.pi)
    ca = math.cos(alpha * math.pi)
    width = min(math.pi * (1.0 - alpha) / 2.0, alpha * math.pi / 4.0)
    h = 2.0 * math.pi * width / 40.0
    u = np.arange(-40.0, alpha * math.log(45.0) + h, h)
    chi = np.exp(u)
    p = chi ** (1.0 / alpha)
    if beta == 1.0:
        numer = chi * np.exp(-p)
        scale_t = True
    elif beta == alpha:
        numer = chi * p * np.exp(-p)
        scale_t = False
    else:
        # general beta < 1 + alpha
        s1 = math.sin(math.pi * (1.0 - beta))
        s2 = math.sin(math.pi * (1.0 - beta + alpha))
        numer = None
    out = np.empty_like(t)
    rows = max(1, _MAX_BLOCK // u.size)
    for start in range(0, t.size, rows):
        tt = t[start : start + rows, None]
        den = chi * chi + (2.0 * ca) * chi * tt + tt * tt
        if numer is None:
            w = chi ** ((1.0 - beta) / alpha) * np.exp(-p) * chi
            val = ((w * (chi * s1 + tt * s2)) / den).sum(axis=1) / (alpha * math.pi)
        else:
            val = (numer / den).sum(axis=1) * (sa / (alpha * math.pi))
            if scale_t:
                val *= tt[:, 0]
        out[start : start + rows] = h * val
    return out


def _asymptotic(t: np.ndarray, alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Algebraic expansion for large t; second output flags convergence.

    Truncation is decided on the envelope Gamma(1 - beta + alpha k) / pi of
    the coefficients so that accidental near-zeros of 1/Gamma do not stop the
    sum early.
    """
    pmax = int((170.0 + beta) / alpha)
    ks = np.arange(1, pmax + 1)
    coef = np.array([rgamma(beta - alpha * k) for k in ks])
    logenv = np.array([math.lgamma(1.0 - beta + alpha * k) for k in ks]) - math.log(math.pi)
    logt = np.log(t)
    total = np.zeros_like(t)
    active = np.ones(t.shape, dtype=bool)
    converged = np.zeros(t.shape, dtype=bool)
    prev = np.full_like(t, np.inf)
    inv = -1.0 / t
    power = np.ones_like(t)
    for k in ks:
        power = power * inv
        env = logenv[k - 1] - k * logt
        # divergent tail reached before the tolerance: leave unconverged
        active &= ~(env > prev)
        if coef[k - 1] != 0.0:
            total = np.where(active, total - coef[k - 1] * power, total)
        small = active & (np.exp(env) <= 1e-17 * np.abs(total))
        converged |= small
        active &= ~small
        prev = np.where(active, env, prev)
        if not active.any():
            break
    return total, converged


def mittag_leffler(x, alpha: float, beta: float = 1.0):
    """Evaluate :math:`E_{\\alpha,\\beta}(x)` for real (array-like) ``x``.

    Returns a float for scalar input, otherwise an array of the same shape.
    Raises :class:`ValueError` for ``alpha <= 0`` or for arguments outside the
    supported range (``alpha > 1`` with strongly negative ``x``) and
    :class:`OverflowError` if the value exceeds the floating range.
    """
    alpha = float(alpha)
    beta = float(beta)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive: {alpha}")

    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if np.any(np.isnan(xs)):
        raise ValueError("nan argument")

    if alpha == 1.0 and beta == 1.0:
        with np.errstate(over="raise"):
            try:
                out = np.exp(xs)
            except FloatingPointError as exc:
                raise OverflowError("E_{1,1}(x) overflows") from exc
        return float(out[0]) if scalar else out.reshape(np.shape(x))

    out = np.empty_like(xs)
    todo = np.ones(xs.shape, dtype=bool)

    # asymptotic branch
    if alpha < 1.0:
        t = -xs
        stokes = _STOKES_EFOLDS + math.log(1.0 / math.sin(alpha * math.pi))
        with np.errstate(invalid="ignore", over="ignore"):
            mask = (t >= ASYMPTOTIC_THRESHOLD) & (np.abs(t) ** (1.0 / alpha) >= stokes)
        if mask.any():
            val, conv = _asymptotic(t[mask], alpha, beta)
            idx = np.flatnonzero(mask)[conv]
            out[idx] = val[conv]
            todo[idx] = False

    # series branch
    if alpha >= 1.0:
        cand = todo.copy()
    else:
        cand = todo & (xs > -ASYMPTOTIC_THRESHOLD)
    if cand.any():
        val, bound = _series(xs[cand], alpha, beta)
        good = (xs[cand] >= 0) | (bound <= SERIES_CANCELLATION_LIMIT)
        if np.any(~np.isfinite(val[good])):
            raise OverflowError(f"E_{{{alpha},{beta}}}(x) overflows")
        idx = np.flatnonzero(cand)[good]
        out[idx] = val[good]
        todo[idx] = False

    if todo.any():
        if alpha >= 1.0 or beta >= 1.0 + alpha:
            raise ValueError(
                f"E_{{{alpha},{beta}}}(x) not supported for x = {xs[todo].min():g}"
            )
        out[todo] = _integral(-xs[todo], alpha, beta)

    return float(out[0]) if scalar else out.reshape(np.shape(x))


def ml(order: MLOrder, x):
    """Shorthand for :func:`mittag_leffler` with an :class:`MLOrder`."""
    return mittag_leffler(x, order.alpha, order.beta)


def kernel(spec: KernelSpec, t):
    r"""Evaluate :math:`t^{\alpha-1} E_{\alpha,\alpha}(-\lambda t^\alpha)` for ``t > 0``."""
    tt = np.asarray(t, dtype=float)
    if np.any(tt <= 0):
        raise ValueError("kernel is singular at t <= 0")
    a = spec.alpha
    val = tt ** (a - 1.0) * mittag_leffler(-spec.lam * tt**a, a, a)
    return float(val) if np.ndim(t) == 0 else val


def kernel_primitive(spec: KernelSpec, a, b):
    r"""Exact integral of :func:`kernel` over ``[a, b]``.

    Uses :math:`\frac{d}{dt} E_{\alpha,1}(-\lambda t^\alpha)
    = -\lambda t^{\alpha-1} E_{\alpha,\alpha}(-\lambda t^\alpha)`.
    """
    aa = np.asarray(a, dtype=float)
    bb = np.asarray(b, dtype=float)
    if np.any(aa < 0) or np.any(aa > bb):
        raise ValueError("need 0 <= a <= b")
    al = spec.alpha
    ea = mittag_leffler(-spec.lam * aa**al, al, 1.0)
    eb = mittag_leffler(-spec.lam * bb**al, al, 1.0)
    val = (np.asarray(ea) - np.asarray(eb)) / spec.lam
    val = np.where(aa == bb, 0.0, val)
    return float(val) if val.ndim == 0 else val
