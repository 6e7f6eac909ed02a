"""Dirichlet eigensystem of the Laplacian on the unit disk.

Eigenfunctions are ``w J_m(j r) cos(m theta)`` and ``w J_m(j r) sin(m theta)``
with ``j`` a positive zero of ``J_m`` and eigenvalue ``j**2``.  Modes are
numbered from 1 in nondecreasing eigenvalue order; inside a degenerate pair
the cosine member comes first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special

__all__ = [
    "EigenMode",
    "PolarQuadrature",
    "bessel_j",
    "bessel_zeros",
    "build_eigensystem",
    "eval_phi",
    "make_quadrature",
    "mode_matrix",
    "project",
    "synthesize",
]

MAX_DEGREE = 60
_SCAN_STEP = math.pi / 8


@dataclass(frozen=True)
class EigenMode:
    index: int
    m: int
    k: int
    parity: str  # "cos" or "sin"
    bessel_zero: float
    weight: float

    @property
    def lam(self) -> float:
        return self.bessel_zero**2

    def angular(self, theta):
        if self.parity == "cos":
            return np.cos(self.m * np.asarray(theta))
        return np.sin(self.m * np.asarray(theta))

    def radial(self, r):
        return self.weight * bessel_j(self.m, self.bessel_zero * np.asarray(r))


@dataclass(frozen=True, eq=False)
class PolarQuadrature:
    """Tensor rule on the disk: Gauss-Legendre in ``r`` (weights include the
    Jacobian ``r``) times the midpoint rule in ``theta``."""

    r: np.ndarray
    wr: np.ndarray
    theta: np.ndarray
    wtheta: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.r.size, self.theta.size)

    @property
    def weights(self) -> np.ndarray:
        return np.outer(self.wr, self.wtheta)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.r, self.theta, indexing="ij")

    def integrate(self, values: np.ndarray) -> float:
        return float(self.wr @ np.asarray(values) @ self.wtheta)

    def evaluate(self, fn: Callable) -> np.ndarray:
        """Values of ``fn(r, theta)`` on the node grid."""
        rr, tt = self.grid()
        return np.broadcast_to(np.asarray(fn(rr, tt), dtype=float), self.shape)


def bessel_j(m: int, x):
    """Bessel function of the first kind ``J_m(x)`` for ``x >= 0``."""
    if m < 0 or m > MAX_DEGREE:
        raise ValueError(f"degree out of range: {m}")
    xx = np.asarray(x, dtype=float)
    if np.any(xx < 0):
        raise ValueError("bessel_j needs x >= 0")
    val = special.jv(m, xx)
    return float(val) if val.ndim == 0 else val


def bessel_zeros(m: int, count: int) -> np.ndarray:
    """First ``count`` positive zeros of ``J_m``.

    Sign changes are bracketed on a scan of step pi/8 and refined with Brent's
    method.
    """
    if count < 1:
        raise ValueError("count must be positive")
    # J_m has no zeros in (0, m]
    x0 = max(float(m), _SCAN_STEP)
    f0 = bessel_j(m, x0)
    zeros: list[float] = []
    x = x0
    limit = x0 + (count + 2) * math.pi + 10.0
    while len(zeros) < count:
        x1 = x + _SCAN_STEP
        if x1 > limit:
            raise RuntimeError(f"zero scan for J_{m} missed a sign change")
        f1 = bessel_j(m, x1)
        if f0 == 0.0:
            zeros.append(x)
        elif f0 * f1 < 0:
            zeros.append(optimize.brentq(lambda z: bessel_j(m, z), x, x1, xtol=1e-15, rtol=1e-15))
        x, f0 = x1, f1
    out = np.array(zeros)
    if np.any(np.diff(out) < _SCAN_STEP):
        raise RuntimeError(f"zero scan for J_{m} is too coarse")
    return out


def _weight(m: int, j: float) -> float:
    # from int_0^1 J_m(j r)^2 r dr = J_{m+1}(j)^2 / 2
    jp = abs(bessel_j(m + 1, j))
    if m == 0:
        return 1.0 / (math.sqrt(math.pi) * jp)
    return math.sqrt(2.0 / math.pi) / jp


def build_eigensystem(N: int, quad: PolarQuadrature | None = None) -> list[EigenMode]:
    """The ``N`` lowest Dirichlet modes of the unit disk.

    If ``quad`` is given, the normalization of every mode is checked against
    the quadrature rule.
    """
    if N < 1 or N > 400:
        raise ValueError("N must be in [1, 400]")
    # Weyl: the count below j is about j**2 / 4
    bound = 2.0 * math.sqrt(N) + 6.0
    for attempt in range(2):
        cands = []
        m = 0
        while m <= MAX_DEGREE:
            # the first zero of J_m exceeds m
            if m > bound:
                break
            count = max(1, int((bound - m) / math.pi) + 2)
            zs = bessel_zeros(m, count)
            for k, j in enumerate(zs[zs <= bound], start=1):
                cands.append((j, m, k))
            m += 1
        nmodes = sum(1 if m == 0 else 2 for _, m, _ in cands)
        if nmodes >= N:
            break
        if attempt == 1:
            raise RuntimeError(f"search bound {bound:.2f} produced {nmodes} < {N} modes")
        bound *= 1.5

    cands.sort(key=lambda c: (c[0], c[1]))
    modes: list[EigenMode] = []
    for j, m, k in cands:
        w = _weight(m, j)
        for parity in ("cos",) if m == 0 else ("cos", "sin"):
            modes.append(EigenMode(len(modes) + 1, m, k, parity, float(j), w))
    modes = modes[:N]

    if quad is not None:
        phi = mode_matrix(modes, quad)
        norms = np.einsum("nij,ij,nij->n", phi, quad.weights, phi)
        if np.max(np.abs(norms - 1.0)) > 1e-8:
            raise RuntimeError("mode normalization failed against quadrature")
    return modes


def eval_phi(mode: EigenMode, r, theta):
    """Value of the normalized eigenfunction at polar points."""
    rr = np.asarray(r, dtype=float)
    if np.any(rr < 0) or np.any(rr > 1):
        raise ValueError("r must be in [0, 1]")
    val = mode.radial(rr) * mode.angular(theta)
    return float(val) if np.ndim(val) == 0 else val


def make_quadrature(n_r: int = 64, n_theta: int = 256) -> PolarQuadrature:
    if n_r < 8 or n_theta < 16:
        raise ValueError("need n_r >= 8 and n_theta >= 16")
    x, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (x + 1.0)
    wr = 0.5 * w * r
    dt = 2.0 * math.pi / n_theta
    theta = (np.arange(n_theta) + 0.5) * dt
    wtheta = np.full(n_theta, dt)
    return PolarQuadrature(r, wr, theta, wtheta)


def mode_matrix(modes: list[EigenMode], quad: PolarQuadrature) -> np.ndarray:
    """Eigenfunction values on the quadrature grid, shape ``(N, n_r, n_theta)``."""
    key = tuple((md.m, md.parity, md.bessel_zero) for md in modes)
    cached = quad._cache.get(key)
    if cached is not None:
        return cached
    out = np.empty((len(modes), *quad.shape))
    for i, md in enumerate(modes):
        out[i] = np.outer(md.radial(quad.r), md.angular(quad.theta))
    out.setflags(write=False)
    quad._cache[key] = out
    return out


def project(field, modes: list[EigenMode], quad: PolarQuadrature) -> np.ndarray:
    """Coefficients ``<field, phi_n>`` by quadrature.

    ``field`` is a callable ``f(r, theta)`` or an array of grid values.
    """
    values = quad.evaluate(field) if callable(field) else np.asarray(field, dtype=float)
    phi = mode_matrix(modes, quad)
    return np.einsum("nij,ij->n", phi, values * quad.weights)


def synthesize(coeffs, modes: list[EigenMode], r, theta) -> np.ndarray:
    """Evaluate ``sum_n c_n phi_n`` at (broadcastable) polar points."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(np.broadcast_shapes(r.shape, theta.shape))
    for c, md in zip(coeffs, modes):
        if c != 0.0:
            out = out + c * md.radial(r) * md.angular(theta)
    return out
