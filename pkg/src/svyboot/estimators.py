"""Point, variance, and third-moment estimators plus the studentized statistic.

All estimators work on the *total* scale; divide by N (and N^2 for the
variance) to move to the mean scale.  Sums use compensated accumulation
(``math.fsum``) so the exact-enumeration oracles can assert 1e-10 relative
agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DrawnSample, EmptySample, TooFewUnits, ZeroVariance

_NEG_CLAMP = 1e-12


@dataclass(frozen=True)
class EstimateBundle:
    """Everything the bootstrap and the expansions need from one sample.

    Attributes
    ----------
    y_hat : float
        Estimated population total.
    v_hat : float
        Variance estimate of ``y_hat`` (never negative).
    mu3_hat : float
        Estimated third central moment (design-specific convention).
    tau3_hat : float, optional
        Second skewness-type moment; Poisson only.
    s2 : float, optional
        Sample variance building block (divisor n); SRS and PPS only.
    """

    y_hat: float
    v_hat: float
    mu3_hat: float
    tau3_hat: float | None = None
    s2: float | None = None

    def __post_init__(self):
        if self.v_hat < 0.0:
            raise ZeroVariance("variance estimate must be non-negative")
        if self.s2 is not None and self.s2 < 0.0:
            raise ZeroVariance("sample variance must be non-negative")


def _fsum(values) -> float:
    return math.fsum(values.tolist() if isinstance(values, np.ndarray) else values)


def _clamp_variance(v: float, magnitude: float) -> float:
    # Rounding can leave a tiny negative residue; anything larger is a bug.
    if v < 0.0 and -v <= _NEG_CLAMP * max(magnitude, 1.0):
        return 0.0
    return v


def ht_poisson(sample: DrawnSample) -> EstimateBundle:
    """Horvitz-Thompson total under Poisson sampling with variance and
    third-moment estimates.

    With sums over sampled units:
    ``y_hat = sum y/pi``, ``v_hat = sum y^2 (1-pi)/pi^2``,
    ``mu3_hat = sum y^3 (1-pi)/pi {(1-pi)^2/pi^2 - 1}`` and
    ``tau3_hat = sum y^3 (1-pi)^2/pi^3``.
    """
    if sample.realized_n < 1:
        raise EmptySample("Horvitz-Thompson estimator needs at least one unit")
    y = sample.values
    pi = sample.probs
    one_minus = 1.0 - pi
    y_hat = _fsum(y / pi)
    v_hat = _fsum(y * y * one_minus / (pi * pi))
    y3 = y**3
    mu3_hat = _fsum(y3 * one_minus / pi * (one_minus**2 / pi**2 - 1.0))
    tau3_hat = _fsum(y3 * one_minus**2 / pi**3)
    return EstimateBundle(y_hat, max(v_hat, 0.0), mu3_hat, tau3_hat=tau3_hat)


def _third_central(values: np.ndarray) -> tuple[float, float, float]:
    """Return (mean, divisor-n variance, divisor-n third central moment)."""
    n = values.size
    mean = _fsum(values) / n
    centered = values - mean
    s2 = _fsum(centered * centered) / n
    # m3 in the expanded form the estimators are defined with
    mu3 = _fsum(values**3) / n + 2.0 * mean**3 - 3.0 * mean * (_fsum(values**2) / n)
    return mean, s2, mu3


def ht_srs(sample: DrawnSample, N: int) -> EstimateBundle:
    """Expansion estimator of the total under SRS.

    ``s2`` uses divisor n (not n-1); the variance estimate is therefore
    exactly (n-1)/n-proportionally biased at finite n, and the oracle tests
    encode that exact relation.
    """
    n = sample.realized_n
    if n < 2:
        raise TooFewUnits("SRS variance estimation needs n >= 2")
    y = sample.values
    mean, s2, mu3 = _third_central(y)
    y_hat = N * mean
    v_hat = N * (N - n) * s2 / n
    return EstimateBundle(y_hat, max(_clamp_variance(v_hat, N * N * s2), 0.0), mu3, s2=s2)


def hh_pps(sample: DrawnSample) -> EstimateBundle:
    """Hansen-Hurwitz estimator of the total under with-replacement PPS.

    Works on the per-draw expansions ``Z_i = y_i / p_i``; ``s2`` is the
    divisor-n sample variance of the Z's and ``v_hat = s2 / n``.
    """
    n = sample.realized_n
    if n < 2:
        raise TooFewUnits("PPS variance estimation needs n >= 2")
    z = sample.values / sample.probs
    mean, s2, mu3 = _third_central(z)
    return EstimateBundle(mean, max(s2 / n, 0.0), mu3, s2=s2)


def studentize(y_hat: float, y_ref: float, v_hat: float) -> float:
    """(estimate - reference) / sqrt(variance estimate).

    Raises
    ------
    ZeroVariance
        When ``v_hat <= 0`` (a degenerate replicate, not a usable pivot).
    """
    if v_hat <= 0.0:
        raise ZeroVariance("studentization needs a strictly positive variance")
    return (y_hat - y_ref) / math.sqrt(v_hat)


def estimate(sample: DrawnSample, N: int) -> EstimateBundle:
    """Dispatch to the estimator matching the sample's design kind."""
    if sample.kind == "poisson":
        return ht_poisson(sample)
    if sample.kind == "srs":
        return ht_srs(sample, N)
    if sample.kind == "pps":
        return hh_pps(sample)
    raise TooFewUnits(f"no single-stage estimator for kind {sample.kind!r}")
