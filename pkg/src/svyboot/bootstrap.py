"""Pseudo-population bootstrap: rebuild, resample, studentize, and the
bootstrap-t / Wald-type confidence intervals.

Each replicate (1) rebuilds a pseudo-population of size N by a multinomial
with inverse-probability weights, (2) redraws the original design from it
with the O(n) fast procedures, and (3) studentizes the redrawn estimate
against that replicate's own pseudo-population total.  Replicates are
embarrassingly parallel: replicate ``r`` owns the stream
``derive_substream(seed, r)`` and results are assembled by replicate index,
so output is invariant to worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    BOOTSTRAP_T,
    POISSON,
    PPS,
    SRS,
    WALD_TYPE,
    ConfidenceInterval,
    DegenerateNormalizer,
    DegenerateReplicate,
    DesignSpec,
    DomainError,
    DrawnSample,
    EmptySample,
    RngContract,
    TooManyDegenerates,
    ZeroVariance,
    as_contract,
    derive_substream,
    pooled_generator,
)
from .core import InvalidProbs
from .designs import draw_multinomial
from .edgeworth import std_normal_quantile

MAX_REDRAWS = 100

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None


def _sequential_wor_py(counts: np.ndarray, n: int, uniforms: np.ndarray) -> np.ndarray:
    """Reference implementation of the sequential without-replacement draw."""
    c = counts.astype(np.int64).copy()
    k = c.size
    m = np.zeros(k, dtype=np.int64)
    total = int(c.sum())
    for step in range(n):
        target = uniforms[step] * total
        acc = 0.0
        pick = k - 1
        for i in range(k):
            acc += c[i]
            if target < acc:
                pick = i
                break
        m[pick] += 1
        c[pick] -= 1
        total -= 1
    return m


if njit is not None:
    _sequential_wor = njit(cache=True)(_sequential_wor_py)
else:  # pragma: no cover
    _sequential_wor = _sequential_wor_py


def sequential_wor_counts(
    counts: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n units without replacement from the multiset given by ``counts``.

    Implements the sequential procedure: at each step category i is selected
    with probability proportional to its remaining count, which is then
    decremented.  Distributionally this equals direct SRS from the expanded
    multiset (verified analytically in the test suite), but each draw costs
    O(k) instead of O(sum counts).
    """
    total = int(counts.sum())
    if n > total:
        raise DomainError("cannot draw more units than the multiset holds")
    u = rng.random(n)
    return _sequential_wor(np.asarray(counts, dtype=np.int64), n, u)


# ---------------------------------------------------------------------------
# Pseudo-population containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootPopulation:
    """One rebuilt pseudo-population over the n sampled units.

    ``rep_counts[i]`` says how many copies of sampled unit i the population
    holds; ``boot_total`` is its total; ``normalizer`` is the PPS-only
    constant that rescales inherited selection probabilities to sum to one.
    """

    base_values: np.ndarray
    base_probs: np.ndarray
    rep_counts: np.ndarray
    boot_total: float
    kind: str
    normalizer: float | None = None

    @property
    def population_size(self) -> int:
        return int(self.rep_counts.sum())


@dataclass(frozen=True)
class ReplicateSet:
    """M studentized bootstrap statistics plus redraw provenance."""

    t_stars: np.ndarray
    discarded: int
    seed: RngContract

    def __post_init__(self):
        t = np.asarray(self.t_stars, dtype=float)
        if t.size and not np.all(np.isfinite(t)):
            raise DomainError("bootstrap statistics must all be finite")
        object.__setattr__(self, "t_stars", t)

    @property
    def size(self) -> int:
        return int(self.t_stars.size)


# ---------------------------------------------------------------------------
# Rebuild (Step 1)
# ---------------------------------------------------------------------------


def rebuild_poisson(sample: DrawnSample, N: int, rng: np.random.Generator) -> BootPopulation:
    """Multinomial pseudo-population with category weights 1/pi_i."""
    if sample.realized_n < 1:
        raise EmptySample("cannot rebuild from an empty sample")
    w = 1.0 / sample.probs
    rho = w / w.sum()
    counts = draw_multinomial(rng, N, rho).counts
    boot_total = float(counts @ sample.values)
    return BootPopulation(sample.values, sample.probs, counts, boot_total, POISSON)


def rebuild_srs(sample: DrawnSample, N: int, rng: np.random.Generator) -> BootPopulation:
    """Multinomial pseudo-population with uniform category weights 1/n."""
    n = sample.realized_n
    rho = np.full(n, 1.0 / n)
    counts = draw_multinomial(rng, N, rho).counts
    boot_total = float(counts @ sample.values)
    return BootPopulation(sample.values, sample.probs, counts, boot_total, SRS)


def rebuild_pps(sample: DrawnSample, N: int, rng: np.random.Generator) -> BootPopulation:
    """Multinomial pseudo-population with category weights 1/p_{a,i}.

    Also records the normalizer ``C* = sum_i counts_i p_{a,i}`` that turns
    inherited selection probabilities into the rebuilt population's own.
    """
    w = 1.0 / sample.probs
    rho = w / w.sum()
    counts = draw_multinomial(rng, N, rho).counts
    boot_total = float(counts @ sample.values)
    normalizer = float(counts @ sample.probs)
    if normalizer <= 0.0:
        raise DegenerateNormalizer("bootstrap selection mass collapsed to zero")
    return BootPopulation(sample.values, sample.probs, counts, boot_total, PPS, normalizer)


# ---------------------------------------------------------------------------
# Resample + studentize (Step 2)
# ---------------------------------------------------------------------------


def resample_poisson(bp: BootPopulation, rng: np.random.Generator) -> float:
    """One Poisson bootstrap statistic: m_i ~ Bin(N_i*, pi_i) independently,
    studentized against the pseudo-population total."""
    m = rng.binomial(bp.rep_counts, bp.base_probs)
    y, pi = bp.base_values, bp.base_probs
    y_hat = float(m @ (y / pi))
    v_hat = float(m @ (y * y * (1.0 - pi) / (pi * pi)))
    if v_hat <= 0.0:
        raise DegenerateReplicate("zero bootstrap variance under Poisson resampling")
    return (y_hat - bp.boot_total) / math.sqrt(v_hat)


def resample_srs_fast(bp: BootPopulation, n: int, rng: np.random.Generator) -> float:
    """One SRS bootstrap statistic via the O(n) sequential redraw."""
    N = bp.population_size
    m = sequential_wor_counts(bp.rep_counts, n, rng)
    return _srs_statistic(bp, m, n, N)


def resample_srs_direct(bp: BootPopulation, n: int, rng: np.random.Generator) -> float:
    """Verification-only variant: expand the multiset and run plain SRS."""
    N = bp.population_size
    expanded = np.repeat(np.arange(bp.rep_counts.size), bp.rep_counts)
    chosen = expanded[rng.permutation(N)[:n]]
    m = np.bincount(chosen, minlength=bp.rep_counts.size).astype(np.int64)
    return _srs_statistic(bp, m, n, N)


def _srs_statistic(bp: BootPopulation, m: np.ndarray, n: int, N: int) -> float:
    y = bp.base_values
    tot = float(m @ y)
    ybar = tot / n
    s2 = float(m @ ((y - ybar) ** 2)) / n
    v_hat = N * (N - n) * s2 / n
    if v_hat <= 0.0:
        raise DegenerateReplicate("zero bootstrap variance under SRS resampling")
    return (N / n * tot - bp.boot_total) / math.sqrt(v_hat)


def pps_dagger_probs(bp: BootPopulation) -> np.ndarray:
    """Category probabilities N_i* p_i / C* for the fast PPS redraw."""
    if bp.normalizer is None:
        raise DegenerateNormalizer("not a PPS pseudo-population")
    dagger = bp.rep_counts * bp.base_probs / bp.normalizer
    total = float(dagger.sum())
    if abs(total - 1.0) > 1e-12:
        raise DegenerateNormalizer(f"bootstrap selection probabilities sum to {total!r}")
    return dagger / total


def resample_pps_fast(bp: BootPopulation, n: int, rng: np.random.Generator) -> float:
    """One PPS bootstrap statistic via category draws with the dagger probs."""
    dagger = pps_dagger_probs(bp)
    m = rng.multinomial(n, dagger)
    return _pps_statistic(bp, m, n)


def resample_pps_direct(bp: BootPopulation, n: int, rng: np.random.Generator) -> float:
    """Verification-only variant: draw over all N expanded copies."""
    reps = bp.rep_counts.astype(np.int64)
    per_copy = np.repeat(bp.base_probs / bp.normalizer, reps)
    owner = np.repeat(np.arange(reps.size), reps)
    cum = np.cumsum(per_copy)
    cum[-1] = 1.0
    picks = np.searchsorted(cum, rng.random(n), side="right")
    m = np.bincount(owner[picks], minlength=reps.size).astype(np.int64)
    return _pps_statistic(bp, m, n)


def _pps_statistic(bp: BootPopulation, m: np.ndarray, n: int) -> float:
    z = bp.normalizer * bp.base_values / bp.base_probs
    y_hat = float(m @ z) / n
    v_hat = float(m @ ((z - y_hat) ** 2)) / (n * n)
    if v_hat <= 0.0:
        raise DegenerateReplicate("zero bootstrap variance under PPS resampling")
    return (y_hat - bp.boot_total) / math.sqrt(v_hat)


# ---------------------------------------------------------------------------
# The replicate engine (Step 3)
# ---------------------------------------------------------------------------


def _one_replicate(
    sample: DrawnSample, spec: DesignSpec, N: int, stream: RngContract, fast: bool
) -> tuple[float, int]:
    """Run rebuild+resample for one replicate, redrawing degenerates in-stream."""
    rng = pooled_generator(stream)
    discarded = 0
    for _ in range(MAX_REDRAWS):
        try:
            if spec.kind == POISSON:
                bp = rebuild_poisson(sample, N, rng)
                return resample_poisson(bp, rng), discarded
            if spec.kind == SRS:
                bp = rebuild_srs(sample, N, rng)
                n = spec.sample_size
                t = resample_srs_fast(bp, n, rng) if fast else resample_srs_direct(bp, n, rng)
                return t, discarded
            if spec.kind == PPS:
                bp = rebuild_pps(sample, N, rng)
                n = spec.sample_size
                t = resample_pps_fast(bp, n, rng) if fast else resample_pps_direct(bp, n, rng)
                return t, discarded
            raise DomainError(f"run_bootstrap cannot handle design kind {spec.kind!r}")
        except DegenerateReplicate:
            discarded += 1
    raise TooManyDegenerates(f"replicate exhausted {MAX_REDRAWS} redraws")


def _prepare_single(sample: DrawnSample, spec: DesignSpec):
    """Hoist replicate-invariant arrays; the prepared replicate consumes the
    stream identically to the composed rebuild/resample functions (tested)."""
    y = sample.values
    probs = sample.probs
    w = 1.0 / probs
    rho = w / w.sum()
    rho = rho / math.fsum(rho.tolist())
    if spec.kind == POISSON:
        return (POISSON, rho, y, probs, y / probs, y * y * (1.0 - probs) / (probs * probs))
    if spec.kind == SRS:
        n = sample.realized_n
        rho_u = np.full(n, 1.0 / n)
        return (SRS, rho_u / math.fsum(rho_u.tolist()), y, spec.sample_size)
    if spec.kind == PPS:
        return (PPS, rho, y, probs, spec.sample_size)
    raise DomainError(f"run_bootstrap cannot handle design kind {spec.kind!r}")


def _prepared_replicate(prep: tuple, N: int, rng: np.random.Generator) -> float:
    kind = prep[0]
    if kind == POISSON:
        _, rho, y, pi, y_over_pi, v_terms = prep
        counts = rng.multinomial(N, rho)
        if counts.sum() != N:
            raise InvalidProbs("multinomial counts do not sum to the trial count")
        y_star = float(counts @ y)
        m = rng.binomial(counts, pi)
        v_hat = float(m @ v_terms)
        if v_hat <= 0.0:
            raise DegenerateReplicate("zero bootstrap variance under Poisson resampling")
        return (float(m @ y_over_pi) - y_star) / math.sqrt(v_hat)
    if kind == SRS:
        _, rho, y, n = prep
        counts = rng.multinomial(N, rho)
        if counts.sum() != N:
            raise InvalidProbs("multinomial counts do not sum to the trial count")
        y_star = float(counts @ y)
        m = _sequential_wor(np.asarray(counts, dtype=np.int64), n, rng.random(n))
        tot = float(m @ y)
        ybar = tot / n
        s2 = float(m @ ((y - ybar) ** 2)) / n
        v_hat = N * (N - n) * s2 / n
        if v_hat <= 0.0:
            raise DegenerateReplicate("zero bootstrap variance under SRS resampling")
        return (N / n * tot - y_star) / math.sqrt(v_hat)
    _, rho, y, p, n = prep
    counts = rng.multinomial(N, rho)
    if counts.sum() != N:
        raise InvalidProbs("multinomial counts do not sum to the trial count")
    y_star = float(counts @ y)
    c_star = float(counts @ p)
    if c_star <= 0.0:
        raise DegenerateNormalizer("bootstrap selection mass collapsed to zero")
    dagger = counts * p / c_star
    total = float(dagger.sum())
    if abs(total - 1.0) > 1e-12:
        raise DegenerateNormalizer(f"bootstrap selection probabilities sum to {total!r}")
    m = rng.multinomial(n, dagger / total)
    z = c_star * y / p
    y_hat = float(m @ z) / n
    v_hat = float(m @ ((z - y_hat) ** 2)) / (n * n)
    if v_hat <= 0.0:
        raise DegenerateReplicate("zero bootstrap variance under PPS resampling")
    return (y_hat - y_star) / math.sqrt(v_hat)


def _replicate_range(args) -> tuple[list[float], int]:
    sample, spec, N, seed, fast, indices = args
    ts, discarded = [], 0
    if not fast:
        for r in indices:
            t, d = _one_replicate(sample, spec, N, derive_substream(seed, r), fast)
            ts.append(t)
            discarded += d
        return ts, discarded
    prep = _prepare_single(sample, spec)
    for r in indices:
        rng = pooled_generator(derive_substream(seed, r))
        d = 0
        while True:
            try:
                ts.append(_prepared_replicate(prep, N, rng))
                break
            except DegenerateReplicate:
                d += 1
                if d >= MAX_REDRAWS:
                    raise TooManyDegenerates(f"replicate exhausted {MAX_REDRAWS} redraws")
        discarded += d
    return ts, discarded


def run_bootstrap(
    sample: DrawnSample,
    spec: DesignSpec,
    N: int,
    M: int = 1000,
    seed: RngContract | int = 0,
    workers: int = 1,
    fast: bool = True,
) -> ReplicateSet:
    """Generate M studentized bootstrap statistics for a single-stage sample.

    Replicate ``r`` draws everything from ``derive_substream(seed, r)``;
    degenerate replicates are redrawn within the same stream (up to
    ``MAX_REDRAWS``) with the ``discarded`` counter incremented, so the output
    is a pure function of ``(seed, sample, spec, N, M)`` whatever ``workers``
    is.
    """
    if M < 1:
        raise DomainError("M must be at least 1")
    seed = as_contract(seed)
    if workers <= 1:
        ts, discarded = _replicate_range((sample, spec, N, seed, fast, range(M)))
    else:
        chunks = [
            (sample, spec, N, seed, fast, range(w, M, workers)) for w in range(workers)
        ]
        t_by_index = np.empty(M)
        discarded = 0
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk, (ts_chunk, d) in zip(chunks, pool.map(_replicate_range, chunks)):
                t_by_index[list(chunk[-1])] = ts_chunk
                discarded += d
        ts = t_by_index
    return ReplicateSet(np.asarray(ts, dtype=float), discarded, seed)


# ---------------------------------------------------------------------------
# Quantiles and intervals
# ---------------------------------------------------------------------------


def empirical_quantile(t_stars: np.ndarray, q: float) -> float:
    """Left-continuous inverse empirical CDF: the ceil(qM)-th order statistic."""
    if not 0.0 < q < 1.0:
        raise DomainError("quantile level must lie in (0, 1)")
    t = np.sort(np.asarray(t_stars, dtype=float))
    if t.size == 0:
        raise DomainError("need at least one replicate")
    k = math.ceil(q * t.size)
    return float(t[max(k, 1) - 1])


def bootstrap_ci(
    y_hat: float, v_hat: float, ts: ReplicateSet | np.ndarray, level: float = 0.90
) -> ConfidenceInterval:
    """Bootstrap-t interval: estimate minus the upper/lower T* quantiles times
    the estimated standard error."""
    if v_hat <= 0.0:
        raise ZeroVariance("bootstrap-t interval needs a positive variance")
    t = ts.t_stars if isinstance(ts, ReplicateSet) else np.asarray(ts, dtype=float)
    alpha = 1.0 - level
    se = math.sqrt(v_hat)
    lower = y_hat - empirical_quantile(t, 1.0 - alpha / 2.0) * se
    upper = y_hat - empirical_quantile(t, alpha / 2.0) * se
    return ConfidenceInterval(lower, upper, level, BOOTSTRAP_T)


def wald_ci(y_hat: float, v_hat: float, level: float = 0.90) -> ConfidenceInterval:
    """Wald-type interval from the standard-normal quantile."""
    if v_hat < 0.0:
        raise ZeroVariance("variance must be non-negative")
    alpha = 1.0 - level
    half = std_normal_quantile(1.0 - alpha / 2.0) * math.sqrt(v_hat)
    return ConfidenceInterval(y_hat - half, y_hat + half, level, WALD_TYPE)
