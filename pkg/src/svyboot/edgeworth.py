"""Second-order expansions of the studentized-statistic CDF, per design.

These are analytic functions of sample-based moment inputs; nothing here is
random.  They serve as the cross-check oracle for the bootstrap
distributions.  Values are *not* clamped to [0, 1]: a clamp would mask
formula errors in tests, so callers needing a probability clamp themselves.
"""

from __future__ import annotations

import math

import numpy as np

from .core import DomainError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def std_normal_cdf(z):
    """Standard normal CDF via erfc; absolute error well below 1e-12."""
    if isinstance(z, np.ndarray):
        return np.array([0.5 * math.erfc(-float(t) / _SQRT2) for t in z])
    return 0.5 * math.erfc(-z / _SQRT2)


def std_normal_pdf(z):
    if isinstance(z, np.ndarray):
        return _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return _INV_SQRT_2PI * math.exp(-0.5 * z * z)


# Acklam's rational approximation of the inverse normal CDF, used only as the
# starting point for Newton refinement against std_normal_cdf.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)


def _acklam(p: float) -> float:
    p_low, p_high = 0.02425, 1.0 - 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
               ((((_D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    if p > p_high:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        return -((((( _C[0]*q + _C[1])*q + _C[2])*q + _C[3])*q + _C[4])*q + _C[5]) / \
                ((((_D[0]*q + _D[1])*q + _D[2])*q + _D[3])*q + 1.0)
    q = p - 0.5
    r = q * q
    return ((((( _A[0]*r + _A[1])*r + _A[2])*r + _A[3])*r + _A[4])*r + _A[5]) * q / \
           (((((_B[0]*r + _B[1])*r + _B[2])*r + _B[3])*r + _B[4])*r + 1.0)


def std_normal_quantile(p: float) -> float:
    """Inverse standard normal CDF: rational starting value plus Newton steps
    on the high-accuracy CDF."""
    if not 0.0 < p < 1.0:
        raise DomainError("quantile argument must lie in (0, 1)")
    if p == 0.5:
        return 0.0
    if p > 0.5:
        # 1 - p is exact for doubles in (0.5, 1); work in the lower tail
        # where erfc keeps full relative accuracy.
        return -_lower_tail_quantile(1.0 - p)
    return _lower_tail_quantile(p)


def _lower_tail_quantile(p: float) -> float:
    z = _acklam(p)
    for _ in range(4):
        err = std_normal_cdf(z) - p
        step = err / std_normal_pdf(z)
        # Guard the far tails where pdf underflows; Acklam alone is already
        # accurate to ~1e-9 there.
        if not math.isfinite(step):
            break
        z -= step
        if abs(step) < 1e-14 * max(1.0, abs(z)):
            break
    return z


def edgeworth_poisson(z, v_hat: float, mu3_hat: float, tau3_hat: float):
    """Two-term expansion of the studentized-HT CDF under Poisson sampling.

    ``Phi(z) + {mu3/(6 v^{3/2}) (1-z^2) + tau3/(2 v^{3/2}) z^2} phi(z)``.
    """
    if v_hat <= 0.0:
        raise DomainError("v_hat must be positive")
    z = np.asarray(z, dtype=float) if isinstance(z, (list, tuple, np.ndarray)) else z
    v32 = v_hat**1.5
    bracket = mu3_hat / (6.0 * v32) * (1.0 - z * z) + tau3_hat / (2.0 * v32) * (z * z)
    return std_normal_cdf(z) + bracket * std_normal_pdf(z)


def edgeworth_srs(z, n: int, N: int, s: float, mu3_hat: float):
    """Expansion of the studentized expansion-estimator CDF under SRS.

    ``s`` is the divisor-n sample standard deviation; the correction carries
    the finite-population factor (1 - n/N).
    """
    if not 0 < n < N:
        raise DomainError("SRS expansion needs 0 < n < N")
    if s <= 0.0:
        raise DomainError("s must be positive")
    z = np.asarray(z, dtype=float) if isinstance(z, (list, tuple, np.ndarray)) else z
    f = n / N
    lead = math.sqrt(1.0 - f) * mu3_hat / (6.0 * math.sqrt(n) * s**3)
    shape = 3.0 * z * z - (1.0 - 2.0 * f) / (1.0 - f) * (z * z - 1.0)
    return std_normal_cdf(z) + lead * shape * std_normal_pdf(z)


def edgeworth_pps(z, n: int, s: float, mu3_hat: float):
    """Expansion of the studentized Hansen-Hurwitz CDF under PPS sampling.

    ``s`` and ``mu3_hat`` are the divisor-n moments of the per-draw
    expansions Z_i = y_i / p_i.
    """
    if n < 1:
        raise DomainError("PPS expansion needs n >= 1")
    if s <= 0.0:
        raise DomainError("s must be positive")
    z = np.asarray(z, dtype=float) if isinstance(z, (list, tuple, np.ndarray)) else z
    lead = mu3_hat / (6.0 * math.sqrt(n) * s**3)
    return std_normal_cdf(z) + lead * (2.0 * z * z + 1.0) * std_normal_pdf(z)
