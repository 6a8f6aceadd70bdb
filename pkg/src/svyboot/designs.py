"""Random sampling primitives and the three single-stage design draws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    POISSON,
    PPS,
    SRS,
    DesignSpec,
    DrawnSample,
    EmptySample,
    FinitePopulation,
    InvalidProbs,
    PROB_SUM_TOL,
    validate_design,
)


@dataclass(frozen=True)
class CountVector:
    """Multinomial counts together with the number of trials they sum to."""

    counts: np.ndarray
    trials: int

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64, copy=True)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        if int(c.sum()) != self.trials:
            raise InvalidProbs("multinomial counts do not sum to the trial count")


def draw_multinomial(rng: np.random.Generator, trials: int, probs) -> CountVector:
    """Draw multinomial counts with ``trials`` trials over ``probs`` categories.

    numpy's generator realizes the counts by the sequential conditional
    binomial scheme (count_i ~ Binomial over remaining mass), which is exact
    and O(k).  A single category with probability one is accepted so the
    degenerate one-unit rebuild works.
    """
    if trials < 0:
        raise InvalidProbs("trials must be non-negative")
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidProbs("probability vector must be 1-D and non-empty")
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p > 1.0):
        raise InvalidProbs("probabilities must lie in (0, 1]")
    total = math.fsum(p.tolist())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise InvalidProbs(f"probabilities sum to {total!r}, not 1")
    if p.size == 1:
        return CountVector(np.array([trials], dtype=np.int64), trials)
    counts = rng.multinomial(trials, p / total)
    return CountVector(counts.astype(np.int64), trials)


def draw_binomial(rng: np.random.Generator, trials: int, p: float) -> int:
    """One Binomial(trials, p) variate; p may sit on the closed endpoints."""
    if trials < 0:
        raise InvalidProbs("trials must be non-negative")
    if not 0.0 <= p <= 1.0:
        raise InvalidProbs("success probability must lie in [0, 1]")
    if p == 0.0:
        return 0
    if p == 1.0:
        return int(trials)
    return int(rng.binomial(trials, p))


def draw_poisson_sample(
    pop: FinitePopulation, spec: DesignSpec, rng: np.random.Generator
) -> DrawnSample:
    """Independent Bernoulli(pi_i) inclusion for every unit.

    Raises
    ------
    EmptySample
        When no unit is selected; the caller decides whether to redraw.
    """
    validate_design(pop, spec)
    pi = spec.inclusion_probs
    include = rng.random(pop.size) < pi
    idx = np.nonzero(include)[0]
    if idx.size == 0:
        raise EmptySample("Poisson draw selected no units")
    return DrawnSample(idx, pop.values[idx], pi[idx], POISSON)


def draw_srs_sample(
    pop: FinitePopulation, spec: DesignSpec, rng: np.random.Generator
) -> DrawnSample:
    """Without-replacement equal-probability sample of fixed size n.

    Uses a full Fisher-Yates permutation of the index array truncated to n,
    which is uniform over all C(N, n) subsets.
    """
    validate_design(pop, spec)
    n = spec.sample_size
    idx = rng.permutation(pop.size)[:n].astype(np.int64)
    probs = np.full(n, n / pop.size)
    return DrawnSample(idx, pop.values[idx], probs, SRS)


def draw_pps_sample(
    pop: FinitePopulation, spec: DesignSpec, rng: np.random.Generator
) -> DrawnSample:
    """n i.i.d. with-replacement draws, unit k selected with probability p_k.

    Categorical draws invert the cumulative sum with a binary search, so each
    draw costs O(log N) given the precomputed cumulative vector.
    """
    validate_design(pop, spec)
    p = spec.selection_probs
    n = spec.sample_size
    cum = np.cumsum(p)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, rng.random(n), side="right").astype(np.int64)
    return DrawnSample(idx, pop.values[idx], p[idx], PPS)


def draw_sample(
    pop: FinitePopulation, spec: DesignSpec, rng: np.random.Generator
) -> DrawnSample:
    """Dispatch to the single-stage draw matching ``spec.kind``."""
    if spec.kind == POISSON:
        return draw_poisson_sample(pop, spec, rng)
    if spec.kind == SRS:
        return draw_srs_sample(pop, spec, rng)
    if spec.kind == PPS:
        return draw_pps_sample(pop, spec, rng)
    raise InvalidProbs(f"not a single-stage design: {spec.kind!r}")
