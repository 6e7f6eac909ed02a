"""Sensors, the source-to-data operators and observed data.

A sensor is either an eigenmode (spectral, full-domain data) or the indicator
of a polar cell inside the measured subdomain.  With
``R[k, m] = <psi_m, phi_k>`` the expected readings are ``A f = R^T (d * f)``
and the covariance of the readings is ``B(g) = R^T (outer(g, g) * M) R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .disk_spectrum import EigenMode
from .sfde_forward import KernelGram, SimConfig, SourceSpec, analytic_moments, simulate_ensemble

__all__ = [
    "CovarianceOperator",
    "ObservationDomain",
    "ObservedData",
    "PolarCell",
    "SensorBasis",
    "apply_A",
    "apply_B",
    "build_R",
    "domain_preset",
    "expectation_matrix",
    "frechet_B",
    "make_observed_data",
    "partition_domain",
    "spectral_basis",
    "unvech",
    "vech",
]

TWO_PI = 2.0 * math.pi
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PolarCell:
    r0: float
    r1: float
    theta0: float
    theta1: float

    @property
    def area(self) -> float:
        return 0.5 * (self.r1**2 - self.r0**2) * (self.theta1 - self.theta0)

    def contains(self, r, theta):
        th = np.mod(theta, TWO_PI)
        return (r >= self.r0) & (r < self.r1) & (th >= self.theta0) & (th < self.theta1)


@dataclass(frozen=True)
class ObservationDomain:
    """A union of polar boxes ``(r0, r1, theta0, theta1)``.

    ``kind`` is one of ``full``, ``concentric``, ``annulus`` or ``sectors``;
    the first three are a single box covering all angles.
    """

    kind: str
    boxes: tuple[tuple[float, float, float, float], ...]

    def __post_init__(self) -> None:
        if self.kind not in ("full", "concentric", "annulus", "sectors"):
            raise ValueError(f"unknown domain kind: {self.kind}")
        if not self.boxes:
            raise ValueError("empty observation domain")
        for r0, r1, t0, t1 in self.boxes:
            if not 0.0 <= r0 < r1 <= 1.0:
                raise ValueError(f"bad radial range ({r0}, {r1})")
            if not 0.0 <= t0 < t1 <= TWO_PI:
                raise ValueError(f"bad angular range ({t0}, {t1})")

    @classmethod
    def full(cls) -> ObservationDomain:
        return cls("full", ((0.0, 1.0, 0.0, TWO_PI),))

    @classmethod
    def concentric(cls, rho: float) -> ObservationDomain:
        return cls("concentric", ((0.0, rho, 0.0, TWO_PI),))

    @classmethod
    def annulus(cls, rho0: float, rho1: float) -> ObservationDomain:
        return cls("annulus", ((rho0, rho1, 0.0, TWO_PI),))

    @classmethod
    def sectors(cls, boxes: Sequence[tuple[float, float, float, float]]) -> ObservationDomain:
        return cls("sectors", tuple(tuple(float(v) for v in b) for b in boxes))

    @property
    def area(self) -> float:
        return sum(0.5 * (r1**2 - r0**2) * (t1 - t0) for r0, r1, t0, t1 in self.boxes)


# (domain, default radial cells, default angular cells per box)
_PRESETS = {
    "a": (lambda: ObservationDomain.concentric(0.25), 4, 16),
    "b": (lambda: ObservationDomain.annulus(0.75, 1.0), 2, 32),
    "c": (
        lambda: ObservationDomain.sectors(
            [(0.75, 1.0, 0.0, math.pi / 4), (0.75, 1.0, math.pi, 1.25 * math.pi)]
        ),
        2,
        8,
    ),
}


def domain_preset(name: str) -> tuple[ObservationDomain, int, int]:
    """Partial-domain cases ``a``, ``b`` and ``c`` with their default partitions."""
    try:
        make, nr, nt = _PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown domain preset: {name}") from None
    return make(), nr, nt


def partition_domain(domain: ObservationDomain, n_r_cells: int, n_theta_cells: int) -> list[PolarCell]:
    """Uniform ``n_r_cells x n_theta_cells`` grid in ``(r, theta)`` on every box."""
    if n_r_cells < 1 or n_theta_cells < 1:
        raise ValueError("cell counts must be positive")
    cells = []
    for r0, r1, t0, t1 in domain.boxes:
        re = np.linspace(r0, r1, n_r_cells + 1)
        te = np.linspace(t0, t1, n_theta_cells + 1)
        for i in range(n_r_cells):
            for j in range(n_theta_cells):
                cells.append(PolarCell(float(re[i]), float(re[i + 1]), float(te[j]), float(te[j + 1])))
    return cells


@dataclass(frozen=True, eq=False)
class SensorBasis:
    """Sensors and the ``N x K`` matrix ``R`` of their mode coefficients."""

    kind: str  # "spectral" or "cells"
    R: np.ndarray
    indices: tuple[int, ...] = ()
    cells: tuple[PolarCell, ...] = ()

    @property
    def K(self) -> int:
        return self.R.shape[1]

    @property
    def N(self) -> int:
        return self.R.shape[0]


def spectral_basis(N: int, indices: Sequence[int] | None = None) -> SensorBasis:
    """Sensors equal to the eigenmodes with the given 1-based ``indices``."""
    idx = tuple(range(1, N + 1)) if indices is None else tuple(int(i) for i in indices)
    if any(i < 1 or i > N for i in idx):
        raise ValueError("mode index out of range")
    R = np.zeros((N, len(idx)))
    for col, i in enumerate(idx):
        R[i - 1, col] = 1.0
    R.setflags(write=False)
    return SensorBasis("spectral", R, indices=idx)


def build_R(cells: Sequence[PolarCell], modes: Sequence[EigenMode], n_gauss: int = 12) -> SensorBasis:
    """Indicator sensors; ``R[k, m]`` is the integral of ``phi_k`` over cell ``m``.

    Each cell gets its own ``n_gauss x n_gauss`` tensor Gauss-Legendre rule
    (radial weights carry the Jacobian), so cell edges are integrated exactly
    instead of being resolved by a global grid.
    """
    if n_gauss < 2:
        raise ValueError("cells need at least 4 quadrature nodes")
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    R = np.empty((len(modes), len(cells)))
    for c, cell in enumerate(cells):
        hr = 0.5 * (cell.r1 - cell.r0)
        ht = 0.5 * (cell.theta1 - cell.theta0)
        r = hr * x + 0.5 * (cell.r0 + cell.r1)
        th = ht * x + 0.5 * (cell.theta0 + cell.theta1)
        wr = hr * w * r
        wt = ht * w
        for k, md in enumerate(modes):
            R[k, c] = (wr @ md.radial(r)) * (wt @ md.angular(th))
    if not np.all(np.isfinite(R)):
        raise FloatingPointError("non-finite sensor matrix")
    R.setflags(write=False)
    return SensorBasis("cells", R, cells=tuple(cells))


def expectation_matrix(sensors: SensorBasis, gram: KernelGram) -> np.ndarray:
    """``A = R^T diag(d)``, shape ``(K, N)``."""
    return sensors.R.T * gram.d


def apply_A(sensors: SensorBasis, gram: KernelGram, f_coeffs) -> np.ndarray:
    return sensors.R.T @ (gram.d * np.asarray(f_coeffs, dtype=float))


def apply_B(sensors: SensorBasis, gram: KernelGram, g_coeffs) -> np.ndarray:
    g = np.asarray(g_coeffs, dtype=float)
    R = sensors.R
    B = R.T @ (np.outer(g, g) * gram.M) @ R
    return 0.5 * (B + B.T)


def frechet_B(sensors: SensorBasis, gram: KernelGram, g, h_dir) -> np.ndarray:
    """Derivative ``R^T ((g h^T + h g^T) * M) R`` of :func:`apply_B` at ``g``."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h_dir, dtype=float)
    R = sensors.R
    gh = np.outer(g, h)
    D = R.T @ ((gh + gh.T) * gram.M) @ R
    return 0.5 * (D + D.T)


def vech(S: np.ndarray) -> np.ndarray:
    """Upper triangle of a symmetric matrix with off-diagonal entries scaled
    by sqrt(2), so that Euclidean and Frobenius norms agree."""
    iu = np.triu_indices(S.shape[0])
    v = S[iu].astype(float)
    v[iu[0] != iu[1]] *= _SQRT2
    return v


def unvech(v: np.ndarray, K: int) -> np.ndarray:
    iu = np.triu_indices(K)
    vals = np.array(v, dtype=float)
    vals[iu[0] != iu[1]] /= _SQRT2
    S = np.zeros((K, K))
    S[iu] = vals
    return S + np.triu(S, 1).T


class CovarianceOperator:
    """``g -> B(g)`` on a fixed sensor basis, with its Jacobian in
    :func:`vech` coordinates."""

    def __init__(self, sensors: SensorBasis, gram: KernelGram):
        if sensors.N != gram.N:
            raise ValueError("sensor and Gram sizes differ")
        self.sensors = sensors
        self.gram = gram
        K = sensors.K
        self._iu = np.triu_indices(K)
        self._scale = np.where(self._iu[0] == self._iu[1], 1.0, _SQRT2)

    @property
    def N(self) -> int:
        return self.gram.N

    @property
    def K(self) -> int:
        return self.sensors.K

    def __call__(self, g) -> np.ndarray:
        return apply_B(self.sensors, self.gram, g)

    def derivative(self, g, h_dir) -> np.ndarray:
        return frechet_B(self.sensors, self.gram, g, h_dir)

    def jacobian(self, g) -> np.ndarray:
        """Matrix of ``h -> vech(B'(g)[h])``, shape ``(K (K+1) / 2, N)``.

        Column ``j`` is ``vech(v_j r_j^T + r_j v_j^T)`` with ``r_j`` the
        ``j``-th row of ``R`` and ``v_j`` the ``j``-th column of
        ``R^T diag(g) M``.
        """
        R = self.sensors.R
        g = np.asarray(g, dtype=float)
        V = R.T @ (g[:, None] * self.gram.M)  # (K, N)
        i, k = self._iu
        J = V[i, :] * R.T[k, :] + R.T[i, :] * V[k, :]
        return J * self._scale[:, None]


@dataclass(frozen=True)
class ObservedData:
    Ehat: np.ndarray
    Chat: np.ndarray
    noisy: bool = False
    delta: float = 0.0

    def __post_init__(self) -> None:
        E = np.asarray(self.Ehat, dtype=float)
        C = np.asarray(self.Chat, dtype=float)
        if C.shape != (E.size, E.size):
            raise ValueError("Chat shape does not match Ehat")
        if not np.array_equal(C, C.T):
            raise ValueError("Chat must be symmetric")
        object.__setattr__(self, "Ehat", E)
        object.__setattr__(self, "Chat", C)


def _noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, 0)))


def make_observed_data(
    source: SourceSpec,
    sensors: SensorBasis,
    gram: KernelGram,
    config: SimConfig,
    data_mode: str = "empirical",
    delta: float = 0.0,
    noise: str = "uniform",
) -> ObservedData:
    """Sensor mean and covariance at time ``T``, optionally with relative noise.

    ``data_mode`` is ``empirical`` (``config.M`` simulated paths) or
    ``analytic`` (exact ``A f`` and ``B(g)``).  Noise multiplies every entry
    by ``1 + delta * xi`` with ``xi`` uniform on ``[-1, 1]`` (or standard
    normal if ``noise == "gaussian"``), drawn from a stream tied to
    ``config.seed``; the covariance is symmetrized afterwards.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if data_mode == "analytic":
        mom = analytic_moments(source, gram)
    elif data_mode == "empirical":
        mom = simulate_ensemble(source, config, gram)
    else:
        raise ValueError(f"unknown data mode: {data_mode}")
    R = sensors.R
    E = R.T @ mom.expectation
    C = R.T @ mom.covariance @ R
    C = 0.5 * (C + C.T)
    if delta > 0:
        rng = _noise_rng(config.seed)
        if noise == "uniform":
            xe = rng.uniform(-1.0, 1.0, E.shape)
            xc = rng.uniform(-1.0, 1.0, C.shape)
        elif noise == "gaussian":
            xe = rng.standard_normal(E.shape)
            xc = rng.standard_normal(C.shape)
        else:
            raise ValueError(f"unknown noise distribution: {noise}")
        E = E * (1.0 + delta * xe)
        C = C * (1.0 + delta * xc)
        C = 0.5 * (C + C.T)
    return ObservedData(E, C, noisy=delta > 0, delta=float(delta))
