"""Two-stage cluster sampling: draws, design-unbiased estimation, and the
cluster-level extension of the pseudo-population bootstrap.

Stage one samples clusters (Poisson or PPS, probability proportional to
cluster size); stage two runs an independent SRS of fixed size inside every
selected cluster.  The bootstrap first rebuilds the H clusters from the
stage-one sample (carrying each cluster's within-sample along with every
copy), then rebuilds each cluster copy's finite population independently,
and finally reruns the full two-stage design on the rebuilt population.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bootstrap import MAX_REDRAWS, ReplicateSet, njit
from .core import (
    POISSON,
    PPS,
    DegenerateReplicate,
    DesignSpec,
    DomainError,
    DrawnSample,
    EmptyFirstStage,
    FinitePopulation,
    LengthMismatch,
    PiOutOfRange,
    RngContract,
    SRS,
    TooFewClusters,
    TooFewUnits,
    TooManyDegenerates,
    as_contract,
    derive_substream,
    pooled_generator,
)


@dataclass(frozen=True)
class ClusteredPopulation:
    """H clusters of study values; the population is their disjoint union."""

    clusters: tuple[FinitePopulation, ...]

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if len(self.clusters) < 2:
            raise LengthMismatch("need at least two clusters")
        if any(c.size < 2 for c in self.clusters):
            raise LengthMismatch("every cluster needs at least two units")

    @property
    def H(self) -> int:
        return len(self.clusters)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.clusters], dtype=np.int64)

    @property
    def N(self) -> int:
        return int(self.sizes.sum())

    @property
    def cluster_totals(self) -> np.ndarray:
        return np.array([c.total for c in self.clusters])

    @property
    def total(self) -> float:
        return float(math.fsum(c.total for c in self.clusters))

    @property
    def mean(self) -> float:
        return self.total / self.N


@dataclass(frozen=True)
class TwoStageSample:
    """Stage-one cluster draws plus one within-cluster SRS per draw.

    Under PPS the same cluster may appear several times; each occurrence
    carries its own independent within-sample.
    """

    cluster_ids: np.ndarray
    cluster_sizes: np.ndarray
    cluster_probs: np.ndarray
    within_samples: tuple[DrawnSample, ...]
    stage1_kind: str
    n1: int
    n2: int

    def __post_init__(self):
        ids = np.array(self.cluster_ids, dtype=np.int64, copy=True)
        sizes = np.array(self.cluster_sizes, dtype=np.int64, copy=True)
        probs = np.array(self.cluster_probs, dtype=float, copy=True)
        for a in (ids, sizes, probs):
            a.setflags(write=False)
        object.__setattr__(self, "cluster_ids", ids)
        object.__setattr__(self, "cluster_sizes", sizes)
        object.__setattr__(self, "cluster_probs", probs)
        object.__setattr__(self, "within_samples", tuple(self.within_samples))
        L = ids.size
        if not (sizes.size == probs.size == len(self.within_samples) == L):
            raise LengthMismatch("two-stage sample vectors disagree in length")
        if any(w.realized_n != self.n2 for w in self.within_samples):
            raise LengthMismatch("every within-cluster sample must have size n2")
        if self.n2 < 2 or (L and self.n2 >= sizes.min()):
            raise TooFewUnits("need 2 <= n2 < min selected cluster size")

    @property
    def n_selected(self) -> int:
        return int(self.cluster_ids.size)

    def within_value_matrix(self) -> np.ndarray:
        return np.array([w.values for w in self.within_samples])


def stage1_probabilities(cpop: ClusteredPopulation, spec: DesignSpec) -> np.ndarray:
    """Size-proportional stage-one probabilities: n1*N_i/N (Poisson) or N_i/N (PPS)."""
    sizes = cpop.sizes.astype(float)
    if spec.stage1_kind == POISSON:
        pi = spec.stage1_size * sizes / cpop.N
        if np.any(pi >= 1.0) or np.any(pi <= 0.0):
            raise PiOutOfRange("cluster inclusion probabilities must lie in (0, 1)")
        return pi
    if spec.stage1_kind == PPS:
        return sizes / cpop.N
    raise DomainError(f"unsupported first-stage kind {spec.stage1_kind!r}")


def draw_two_stage(
    cpop: ClusteredPopulation, spec: DesignSpec, rng: np.random.Generator
) -> TwoStageSample:
    """Draw clusters (stage one) and an independent SRS inside each (stage two).

    Raises
    ------
    EmptyFirstStage
        When a Poisson first stage selects no cluster; the harness redraws.
    """
    if spec.kind != "two_stage":
        raise DomainError("spec must be a two-stage design")
    n1, n2 = spec.stage1_size, spec.stage2_size
    if n2 < 2 or n2 >= int(cpop.sizes.min()):
        raise TooFewUnits("need 2 <= n2 < min cluster size")
    probs = stage1_probabilities(cpop, spec)
    if spec.stage1_kind == POISSON:
        chosen = np.nonzero(rng.random(cpop.H) < probs)[0]
        if chosen.size == 0:
            raise EmptyFirstStage("Poisson first stage selected no cluster")
    else:
        cum = np.cumsum(probs)
        cum[-1] = 1.0
        chosen = np.searchsorted(cum, rng.random(n1), side="right")
    withins = []
    for cid in chosen:
        cluster = cpop.clusters[int(cid)]
        idx = rng.permutation(cluster.size)[:n2].astype(np.int64)
        withins.append(
            DrawnSample(idx, cluster.values[idx], np.full(n2, n2 / cluster.size), SRS)
        )
    return TwoStageSample(
        chosen.astype(np.int64),
        cpop.sizes[chosen],
        probs[chosen],
        tuple(withins),
        spec.stage1_kind,
        n1,
        n2,
    )


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoStageEstimate:
    """Mean-scale point estimate and variance estimate for a two-stage sample."""

    y_tilde: float
    v_tilde: float
    clamped: bool = False


def _cluster_contributions(
    sizes: np.ndarray, n2: int, value_rows: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster total estimates and their within-SRS variance estimates.

    ``weights`` are multiplicities over the n2 within-sample values (all ones
    for an original sample); the within sample variance uses divisor n2 - 1.
    """
    means = (weights * value_rows).sum(axis=1) / n2
    dev2 = (value_rows - means[:, None]) ** 2
    s2 = (weights * dev2).sum(axis=1) / (n2 - 1)
    y_hat = sizes * means
    v_hat = sizes * (sizes - n2) * s2 / n2
    return y_hat, v_hat


def _combine_stage1(
    stage1_kind: str,
    n1: int,
    probs: np.ndarray,
    y_hat: np.ndarray,
    v_hat: np.ndarray,
    N: int,
) -> TwoStageEstimate:
    """Fold per-cluster estimates into the mean-scale two-stage estimate.

    Poisson first stage uses the inverse-inclusion form with variance
    ``N^-2 [sum pi^-2 (1-pi) yhat^2 + sum pi^-1 vhat]``.  A PPS first stage
    uses the Hansen-Hurwitz form whose variance estimator collapses to the
    classical with-replacement expression
    ``N^-2 (n1 (n1-1))^-1 sum (yhat_i/p_i - zbar)^2`` once the within-cluster
    terms of the two-part decomposition cancel.
    """
    if stage1_kind == POISSON:
        y_tilde = float((y_hat / probs).sum()) / N
        v = float(((1.0 - probs) * y_hat**2 / probs**2).sum() + (v_hat / probs).sum())
        v_tilde = v / (N * N)
    elif stage1_kind == PPS:
        if n1 < 2:
            raise TooFewClusters("PPS first-stage variance needs n1 >= 2")
        z = y_hat / probs
        z_tilde = float(z.sum()) / n1
        y_tilde = z_tilde / N
        v_tilde = float(((z - z_tilde) ** 2).sum()) / (n1 * (n1 - 1)) / (N * N)
    else:
        raise DomainError(f"unsupported first-stage kind {stage1_kind!r}")
    clamped = v_tilde < 0.0
    return TwoStageEstimate(y_tilde, max(v_tilde, 0.0), clamped)


def estimate_two_stage(ts: TwoStageSample, N: int) -> TwoStageEstimate:
    """Design-unbiased mean estimate and variance estimate (mean scale)."""
    if ts.n_selected == 0:
        raise EmptyFirstStage("no clusters in the sample")
    sizes = ts.cluster_sizes.astype(float)
    rows = ts.within_value_matrix()
    ones = np.ones_like(rows)
    y_hat, v_hat = _cluster_contributions(sizes, ts.n2, rows, ones)
    return _combine_stage1(ts.stage1_kind, ts.n1, ts.cluster_probs, y_hat, v_hat, N)


# ---------------------------------------------------------------------------
# Two-stage bootstrap
# ---------------------------------------------------------------------------


def _rebuild_within_py(rng, sizes_c, rows_c, n2):
    """Per-copy within-cluster rebuild: multinomial counts (uniform over the
    n2 sampled values, N_i trials) as a chain of conditional binomials, plus
    each copy's rebuilt cluster total."""
    H = sizes_c.shape[0]
    counts = np.zeros((H, n2), dtype=np.int64)
    totals = np.zeros(H)
    for c in range(H):
        remaining = sizes_c[c]
        tot = 0.0
        for j in range(n2 - 1):
            k = rng.binomial(remaining, 1.0 / (n2 - j))
            counts[c, j] = k
            tot += k * rows_c[c, j]
            remaining -= k
        counts[c, n2 - 1] = remaining
        tot += remaining * rows_c[c, n2 - 1]
        totals[c] = tot
    return counts, totals


def _within_srs_moments_py(rng, counts_sel, rows_sel, n2):
    """Sequential WOR redraw of size n2 inside each selected cluster copy;
    returns the weighted sample means and divisor-(n2-1) variances."""
    L = counts_sel.shape[0]
    means = np.empty(L)
    s2s = np.empty(L)
    for i in range(L):
        c = counts_sel[i].copy()
        total = 0
        for j in range(n2):
            total += c[j]
        m = np.zeros(n2, dtype=np.int64)
        for _ in range(n2):
            target = rng.random() * total
            acc = 0.0
            pick = n2 - 1
            for j in range(n2):
                acc += c[j]
                if target < acc:
                    pick = j
                    break
            m[pick] += 1
            c[pick] -= 1
            total -= 1
        mean = 0.0
        for j in range(n2):
            mean += m[j] * rows_sel[i, j]
        mean /= n2
        dev = 0.0
        for j in range(n2):
            d = rows_sel[i, j] - mean
            dev += m[j] * d * d
        means[i] = mean
        s2s[i] = dev / (n2 - 1)
    return means, s2s


if njit is not None:
    _rebuild_within = njit(cache=True)(_rebuild_within_py)
    _within_srs_moments = njit(cache=True)(_within_srs_moments_py)
else:  # pragma: no cover
    _rebuild_within = _rebuild_within_py
    _within_srs_moments = _within_srs_moments_py


def _prepare_two_stage(ts: TwoStageSample) -> tuple:
    """Hoist replicate-invariant arrays out of the per-replicate loop."""
    w = 1.0 / ts.cluster_probs
    return (
        ts.stage1_kind,
        ts.n1,
        ts.n2,
        ts.cluster_probs,
        np.ascontiguousarray(ts.cluster_sizes),
        np.ascontiguousarray(ts.within_value_matrix()),
        w / w.sum(),
    )


def _two_stage_replicate(prep: tuple, N: int, H: int, stream: RngContract) -> tuple[float, int]:
    rng = pooled_generator(stream)
    stage1_kind, n1, n2, probs, sizes, rows, rho = prep
    L = probs.size
    discarded = 0
    for _ in range(MAX_REDRAWS):
        # Step 1: rebuild the cluster population (H copies over the L draws).
        counts1 = rng.multinomial(H, rho) if L > 1 else np.array([H])
        if counts1.sum() != H:
            raise LengthMismatch("cluster rebuild counts do not sum to H")
        src = np.repeat(np.arange(L), counts1)
        sizes_c = sizes[src]
        probs_c = probs[src]
        # Stage-one selection over the copies is independent of the
        # within-cluster rebuilds, so it can be drawn first.
        if stage1_kind == POISSON:
            sel = np.nonzero(rng.random(H) < probs_c)[0]
            if sel.size == 0:
                discarded += 1
                continue
            sel_unique = sel
        else:
            mass = float(probs_c.sum())
            m1 = rng.multinomial(n1, probs_c / mass)
            sel = np.repeat(np.arange(H), m1)
            sel_unique = np.unique(sel)
        # Step 2: every copy gets an independent within-cluster rebuild.
        # Selected copies need their full count vectors (they are resampled);
        # unselected copies only contribute their rebuilt totals, and
        # same-source multinomials with identical uniform weights add, so one
        # aggregated rebuild per source cluster realizes their sum exactly.
        rows_sel_unique = np.ascontiguousarray(rows[src[sel_unique]])
        counts_sel, totals_sel = _rebuild_within(
            rng, np.ascontiguousarray(sizes_c[sel_unique]), rows_sel_unique, n2
        )
        if (counts_sel.sum(axis=1) != sizes_c[sel_unique]).any():
            raise LengthMismatch("within-cluster rebuild counts do not sum to N_i")
        unselected_per_source = counts1 - np.bincount(src[sel_unique], minlength=L)
        _, totals_rest = _rebuild_within(
            rng, np.ascontiguousarray(unselected_per_source * sizes), rows, n2
        )
        boot_mean_ref = (float(totals_sel.sum()) + float(totals_rest.sum())) / N
        # Rerun the two-stage design on the rebuilt population.
        occurrence = np.searchsorted(sel_unique, sel)
        means, s2s = _within_srs_moments(
            rng, counts_sel[occurrence], rows_sel_unique[occurrence], n2
        )
        sel_sizes = sizes_c[sel].astype(float)
        y_hat = sel_sizes * means
        v_hat = sel_sizes * (sel_sizes - n2) * s2s / n2
        if stage1_kind == PPS:
            # Copies inherit p_i; the rebuilt population's own selection
            # probabilities are p_i / C_H*, so expansion weights carry C_H*.
            est = _combine_stage1(PPS, n1, probs_c[sel] / mass, y_hat, v_hat, N)
        else:
            est = _combine_stage1(POISSON, n1, probs_c[sel], y_hat, v_hat, N)
        if est.v_tilde <= 0.0:
            discarded += 1
            continue
        t = (est.y_tilde - boot_mean_ref) / math.sqrt(est.v_tilde)
        return t, discarded
    raise TooManyDegenerates(f"two-stage replicate exhausted {MAX_REDRAWS} redraws")


def _two_stage_range(args) -> tuple[list[float], int]:
    ts, N, H, seed, indices = args
    prep = _prepare_two_stage(ts)
    out, discarded = [], 0
    for r in indices:
        t, d = _two_stage_replicate(prep, N, H, derive_substream(seed, r))
        out.append(t)
        discarded += d
    return out, discarded


def bootstrap_two_stage(
    ts: TwoStageSample,
    N: int,
    H: int,
    M: int = 1000,
    seed: RngContract | int = 0,
    workers: int = 1,
) -> ReplicateSet:
    """M studentized two-stage bootstrap statistics.

    Same replicate contract as the single-stage engine: replicate ``r`` owns
    ``derive_substream(seed, r)``, degenerates are redrawn in-stream, output
    does not depend on ``workers``.
    """
    if M < 1:
        raise DomainError("M must be at least 1")
    seed = as_contract(seed)
    if workers <= 1:
        t_list, discarded = _two_stage_range((ts, N, H, seed, range(M)))
        t_stars = np.asarray(t_list, dtype=float)
    else:
        chunks = [(ts, N, H, seed, range(wk, M, workers)) for wk in range(workers)]
        t_stars = np.empty(M)
        discarded = 0
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk, (t_list, d) in zip(chunks, pool.map(_two_stage_range, chunks)):
                t_stars[list(chunk[-1])] = t_list
                discarded += d
    return ReplicateSet(t_stars, discarded, seed)


# ---------------------------------------------------------------------------
# Clustered population CSV (columns: cluster_id,y)
# ---------------------------------------------------------------------------


def load_clustered_csv(path) -> ClusteredPopulation:
    groups: dict[str, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["cluster_id", "y"]:
            raise DomainError("clustered CSV must start with header 'cluster_id,y'")
        for row in reader:
            if not row:
                continue
            y = float(row[1])
            if not math.isfinite(y):
                raise DomainError("clustered CSV contains a non-finite y value")
            groups.setdefault(row[0].strip(), []).append(y)
    clusters = tuple(FinitePopulation(np.array(v)) for v in groups.values())
    return ClusteredPopulation(clusters)
