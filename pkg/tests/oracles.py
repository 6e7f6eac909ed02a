"""Independent reference computations used only by the tests."""

from __future__ import annotations

import math

import mpmath as mp
import numpy as np


def ml_series_mp(alpha: float, beta: float, x: float) -> float:
    """Power series of E_{alpha,beta}(x) in enough digits to absorb cancellation."""
    t = abs(x)
    dps = int(0.4343 * t ** (1.0 / alpha) + 30) if x < 0 else 30
    with mp.workdps(dps):
        a, b, z = mp.mpf(alpha), mp.mpf(beta), mp.mpf(x)
        s = mp.mpf(0)
        k = 0
        tol = mp.mpf(10) ** (-dps + 3)
        while True:
            term = z**k * mp.rgamma(a * k + b)
            s += term
            if k > 5 and abs(term) < tol * max(1, abs(s)) and k * alpha > t ** (1.0 / alpha) + 5:
                return float(s)
            k += 1


def bessel_series(m: int, x: float) -> float:
    """Ascending series of J_m(x) with 40 significant digits."""
    with mp.workdps(40):
        z = mp.mpf(x) / 2
        s = mp.mpf(0)
        for k in range(200):
            term = (-1) ** k * z ** (2 * k + m) / (mp.factorial(k) * mp.factorial(k + m))
            s += term
            if k > 5 and abs(term) < mp.mpf(10) ** -38:
                break
        return float(s)


def bessel_zero_bisection(m: int, lo: float, hi: float) -> float:
    """Bisection on a sign change of the J_m series."""
    flo = bessel_series(m, lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = bessel_series(m, mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def gram_entry_mp(alpha: float, T: float, lam_k: float, lam_l: float) -> float:
    """M_kl by mpmath quadrature on a mesh graded geometrically toward 0."""
    with mp.workdps(30):
        a = mp.mpf(alpha)

        def e(lam, tau):
            z = -mp.mpf(lam) * tau**a
            t = abs(z)
            terms = int(3 * float(t) ** (1 / alpha) / alpha) + 60
            with mp.workdps(int(0.4343 * float(t) ** (1 / alpha)) + 40):
                return mp.fsum(z**k * mp.rgamma(a * k + a) for k in range(terms))

        def f(tau):
            return tau ** (2 * a - 2) * e(lam_k, tau) * e(lam_l, tau)

        pts = [mp.mpf(0)] + [mp.mpf(T) * mp.mpf(2) ** (-k) for k in range(30, -1, -1)]
        return float(mp.quad(f, pts))


def sample_se_of_variance(samples: np.ndarray) -> float:
    """Standard error of the unbiased sample variance (fourth-moment estimate)."""
    n = samples.size
    c = samples - samples.mean()
    m2 = np.mean(c**2)
    m4 = np.mean(c**4)
    return math.sqrt(max(m4 - (n - 3) / (n - 1) * m2**2, 0.0) / n)
