"""Simulation-scale machinery: population generators, Monte Carlo coverage
and distribution experiments, exact-enumeration oracles, and CSV emission.

Every number the harness emits is a deterministic function of (config, seed):
populations, per-rep sample draws, and per-rep bootstrap runs all live on
disjoint derived streams, and aggregation walks replicate indices in order,
so output is byte-identical for any worker count.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bootstrap import bootstrap_ci, run_bootstrap, wald_ci
from .core import (
    POISSON,
    PPS,
    SRS,
    DesignSpec,
    DomainError,
    EmptyFirstStage,
    EmptySample,
    FinitePopulation,
    PiOutOfRange,
    RngContract,
    SpaceTooLarge,
    as_contract,
    derive_substream,
    pooled_generator,
    validate_design,
)
from .designs import draw_sample
from .edgeworth import (
    edgeworth_poisson,
    edgeworth_pps,
    edgeworth_srs,
    std_normal_cdf,
)
from .estimators import estimate, hh_pps, ht_poisson, ht_srs, studentize
from .twostage import (
    ClusteredPopulation,
    bootstrap_two_stage,
    draw_two_stage,
    estimate_two_stage,
    stage1_probabilities,
)

log = logging.getLogger(__name__)

TWO_STAGE_POISSON = "two_stage_poisson"
TWO_STAGE_PPS = "two_stage_pps"
SINGLE_STAGE_DESIGNS = (POISSON, SRS, PPS)
TWO_STAGE_DESIGNS = (TWO_STAGE_POISSON, TWO_STAGE_PPS)

DEFAULT_Z_GRID = (-0.5, -0.25, -0.1, 0.0, 0.1, 0.25, 0.5)

# Stream channels under the experiment's master seed.
_CH_POPULATION = 0
_CH_SAMPLE = 1
_CH_BOOTSTRAP = 2

_MAX_SAMPLE_REDRAWS = 10_000


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one simulation table cell needs."""

    design: str
    n0: int | None = None
    n1: int | None = None
    n2: int | None = None
    N: int = 500
    H: int = 100
    c0: int = 40
    M: int = 1000
    reps: int = 1000
    level: float = 0.90
    seed: int = 0
    z_grid: tuple[float, ...] = DEFAULT_Z_GRID
    workers: int = 1

    def __post_init__(self):
        if self.reps < 1 or self.M < 1:
            raise DomainError("reps and M must be at least 1")
        if any(not math.isfinite(z) for z in self.z_grid):
            raise DomainError("z grid must be finite")
        if self.design in SINGLE_STAGE_DESIGNS and self.n0 is None:
            raise DomainError("single-stage experiments need n0")
        if self.design in TWO_STAGE_DESIGNS and (self.n1 is None or self.n2 is None):
            raise DomainError("two-stage experiments need n1 and n2")
        if self.design not in SINGLE_STAGE_DESIGNS + TWO_STAGE_DESIGNS:
            raise DomainError(f"unknown design {self.design!r}")


# ---------------------------------------------------------------------------
# Population generators
# ---------------------------------------------------------------------------


def gen_population_single(seed, N: int = 500) -> FinitePopulation:
    """Exponential study variable (mean 10) with log-scale size measures.

    ``y_i ~ Exp(10)``; given y_i, ``s_i ~ Exp(y_i)`` and the size measure is
    ``z_i = log(3 + s_i)``, so every z_i >= log 3 > 0.
    """
    rng = as_contract(seed).generator()
    y = rng.exponential(10.0, N)
    s = rng.exponential(y)
    return FinitePopulation(y, np.log(3.0 + s))


def poisson_probs_from_sizes(pop: FinitePopulation, n0: int) -> np.ndarray:
    """Size-proportional inclusion probabilities n0 * z_i / sum z."""
    z = pop.size_measures
    if z is None:
        raise DomainError("population carries no size measures")
    pi = n0 * z / math.fsum(z.tolist())
    if np.any(pi >= 1.0):
        raise PiOutOfRange("requested n0 pushes an inclusion probability to 1")
    return pi


def pps_probs_from_sizes(pop: FinitePopulation) -> np.ndarray:
    """Size-proportional selection probabilities z_i / sum z."""
    z = pop.size_measures
    if z is None:
        raise DomainError("population carries no size measures")
    return z / math.fsum(z.tolist())


def single_stage_population(seed, N: int, n0: int) -> FinitePopulation:
    """Generate a population, regenerating on derived seeds while any
    size-proportional inclusion probability would reach 1."""
    contract = as_contract(seed)
    for attempt in range(100):
        pop = gen_population_single(derive_substream(contract, attempt), N)
        try:
            poisson_probs_from_sizes(pop, n0)
            if attempt:
                log.info("regenerated population %d time(s) for n0=%d", attempt, n0)
            return pop
        except PiOutOfRange:
            continue
    raise PiOutOfRange(f"no valid population after 100 attempts at n0={n0}")


def gen_population_two_stage(seed, H: int = 100, c0: int = 40) -> ClusteredPopulation:
    """Clustered population with size-linked cluster effects.

    ``a_i ~ N(0, variance 50)``, ``N_i ~ Poisson((a_i - 25)^2 / 20) + c0``,
    and within cluster i, ``y_ij = 50 + a_i + e_ij`` with ``e_ij ~ Exp(20)``.
    """
    rng = as_contract(seed).generator()
    a = rng.normal(0.0, math.sqrt(50.0), H)
    q = (a - 25.0) ** 2 / 20.0
    sizes = rng.poisson(q) + c0
    clusters = [
        FinitePopulation(50.0 + a[i] + rng.exponential(20.0, int(sizes[i])))
        for i in range(H)
    ]
    return ClusteredPopulation(tuple(clusters))


def build_design(cfg: ExperimentConfig, pop: FinitePopulation | None) -> DesignSpec:
    if cfg.design == POISSON:
        spec = DesignSpec.poisson(poisson_probs_from_sizes(pop, cfg.n0))
        validate_design(pop, spec)
        return spec
    if cfg.design == SRS:
        spec = DesignSpec.srs(cfg.n0)
        validate_design(pop, spec)
        return spec
    if cfg.design == PPS:
        spec = DesignSpec.pps(pps_probs_from_sizes(pop), cfg.n0)
        validate_design(pop, spec)
        return spec
    stage1 = POISSON if cfg.design == TWO_STAGE_POISSON else PPS
    return DesignSpec.two_stage(stage1, cfg.n1, cfg.n2)


# ---------------------------------------------------------------------------
# Per-rep work units
# ---------------------------------------------------------------------------


def _draw_single_stage(pop, spec, rng) -> tuple:
    """Draw one sample, redrawing empty Poisson samples in-stream."""
    redraws = 0
    while True:
        try:
            return draw_sample(pop, spec, rng), redraws
        except EmptySample:
            redraws += 1
            if redraws >= _MAX_SAMPLE_REDRAWS:
                raise


def _coverage_rep_single(pop, spec, truth, cfg, sample_root, boot_root, r):
    rng = pooled_generator(derive_substream(sample_root, r))
    sample, redraws = _draw_single_stage(pop, spec, rng)
    est = estimate(sample, cfg.N)
    y_mean = est.y_hat / cfg.N
    v_mean = est.v_hat / (cfg.N * cfg.N)
    rs = run_bootstrap(sample, spec, cfg.N, cfg.M, derive_substream(boot_root, r))
    ci_b = bootstrap_ci(y_mean, v_mean, rs, cfg.level)
    ci_w = wald_ci(y_mean, v_mean, cfg.level)
    return (
        ci_b.contains(truth),
        ci_b.length,
        ci_w.contains(truth),
        ci_w.length,
        redraws,
        rs.discarded,
    )


def _coverage_rep_two_stage(cpop, spec, truth, cfg, sample_root, boot_root, r):
    rng = pooled_generator(derive_substream(sample_root, r))
    redraws = 0
    while True:
        try:
            ts = draw_two_stage(cpop, spec, rng)
            break
        except EmptyFirstStage:
            redraws += 1
            if redraws >= _MAX_SAMPLE_REDRAWS:
                raise
    est = estimate_two_stage(ts, cpop.N)
    rs = bootstrap_two_stage(ts, cpop.N, cpop.H, cfg.M, derive_substream(boot_root, r))
    ci_b = bootstrap_ci(est.y_tilde, est.v_tilde, rs, cfg.level)
    ci_w = wald_ci(est.y_tilde, est.v_tilde, cfg.level)
    return (
        ci_b.contains(truth),
        ci_b.length,
        ci_w.contains(truth),
        ci_w.length,
        redraws,
        rs.discarded,
    )


def _distribution_rep_single(pop, spec, truth, cfg, sample_root, boot_root, r):
    rng = pooled_generator(derive_substream(sample_root, r))
    sample, redraws = _draw_single_stage(pop, spec, rng)
    est = estimate(sample, cfg.N)
    t = studentize(est.y_hat / cfg.N, truth, est.v_hat / (cfg.N * cfg.N))
    rs = run_bootstrap(sample, spec, cfg.N, cfg.M, derive_substream(boot_root, r))
    z = np.asarray(cfg.z_grid)
    boot_cdf = (rs.t_stars[:, None] <= z[None, :]).mean(axis=0)
    return t, boot_cdf, redraws, rs.discarded


def _distribution_rep_two_stage(cpop, spec, truth, cfg, sample_root, boot_root, r):
    rng = pooled_generator(derive_substream(sample_root, r))
    redraws = 0
    while True:
        try:
            ts = draw_two_stage(cpop, spec, rng)
            break
        except EmptyFirstStage:
            redraws += 1
            if redraws >= _MAX_SAMPLE_REDRAWS:
                raise
    est = estimate_two_stage(ts, cpop.N)
    t = studentize(est.y_tilde, truth, est.v_tilde)
    rs = bootstrap_two_stage(ts, cpop.N, cpop.H, cfg.M, derive_substream(boot_root, r))
    z = np.asarray(cfg.z_grid)
    boot_cdf = (rs.t_stars[:, None] <= z[None, :]).mean(axis=0)
    return t, boot_cdf, redraws, rs.discarded


def _rep_chunk(args):
    kind, population, spec, truth, cfg, indices = args
    root = RngContract(cfg.seed)
    sample_root = derive_substream(root, _CH_SAMPLE)
    boot_root = derive_substream(root, _CH_BOOTSTRAP)
    fns = {
        ("coverage", True): _coverage_rep_single,
        ("coverage", False): _coverage_rep_two_stage,
        ("distribution", True): _distribution_rep_single,
        ("distribution", False): _distribution_rep_two_stage,
    }
    fn = fns[(kind, cfg.design in SINGLE_STAGE_DESIGNS)]
    return [fn(population, spec, truth, cfg, sample_root, boot_root, r) for r in indices]


def _run_reps(kind: str, population, spec, truth, cfg: ExperimentConfig) -> list:
    """Run all reps, any worker count, results ordered by rep index."""
    workers = max(1, cfg.workers)
    if workers == 1:
        return _rep_chunk((kind, population, spec, truth, cfg, range(cfg.reps)))
    chunks = [
        (kind, population, spec, truth, cfg, range(w, cfg.reps, workers))
        for w in range(workers)
    ]
    results: list = [None] * cfg.reps
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for chunk, chunk_result in zip(chunks, pool.map(_rep_chunk, chunks)):
            for r, value in zip(chunk[-1], chunk_result):
                results[r] = value
    return results


def _experiment_inputs(cfg: ExperimentConfig):
    root = RngContract(cfg.seed)
    pop_seed = derive_substream(root, _CH_POPULATION)
    if cfg.design in SINGLE_STAGE_DESIGNS:
        n0_for_pi = cfg.n0 if cfg.design == POISSON else 1
        population = single_stage_population(pop_seed, cfg.N, n0_for_pi)
        spec = build_design(cfg, population)
        return population, spec, population.mean
    cpop = gen_population_two_stage(pop_seed, cfg.H, cfg.c0)
    spec = build_design(cfg, None)
    return cpop, spec, cpop.mean


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def run_coverage_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Coverage rate and mean CI length for both methods, one row per method."""
    population, spec, truth = _experiment_inputs(cfg)
    results = _run_reps("coverage", population, spec, truth, cfg)
    cov_b = sum(r[0] for r in results) / cfg.reps
    len_b = math.fsum(r[1] for r in results) / cfg.reps
    cov_w = sum(r[2] for r in results) / cfg.reps
    len_w = math.fsum(r[3] for r in results) / cfg.reps
    redraws = sum(r[4] for r in results)
    discarded = sum(r[5] for r in results)
    if redraws:
        log.info("redrew %d empty first-stage samples across %d reps", redraws, cfg.reps)
    base = {
        "design": cfg.design,
        "n0": cfg.n0,
        "n1": cfg.n1,
        "n2": cfg.n2,
        "reps": cfg.reps,
        "M": cfg.M,
        "seed": cfg.seed,
        "redraws": redraws,
        "discarded": discarded,
    }
    return [
        {**base, "method": "bootstrap_t", "coverage": cov_b, "mean_length": len_b},
        {**base, "method": "wald", "coverage": cov_w, "mean_length": len_w},
    ]


def run_distribution_experiment(cfg: ExperimentConfig) -> list[dict]:
    """P_z, Phi(z), and Boot_z on the configured z grid, one row per z."""
    population, spec, truth = _experiment_inputs(cfg)
    results = _run_reps("distribution", population, spec, truth, cfg)
    t_values = [r[0] for r in results]
    rows = []
    for j, z in enumerate(cfg.z_grid):
        p_z = sum(t <= z for t in t_values) / cfg.reps
        boot_z = math.fsum(r[1][j] for r in results) / cfg.reps
        rows.append(
            {
                "design": cfg.design,
                "n0": cfg.n0,
                "n1": cfg.n1,
                "n2": cfg.n2,
                "z": z,
                "P_z": p_z,
                "Phi_z": std_normal_cdf(z),
                "Boot_z": boot_z,
                "reps": cfg.reps,
                "M": cfg.M,
                "seed": cfg.seed,
            }
        )
    return rows


def run_edgeworth_check(cfg: ExperimentConfig) -> list[dict]:
    """Bootstrap empirical CDF vs the analytic expansion on one sample.

    Draws a single sample from the configured design, runs an M-replicate
    bootstrap, and evaluates the matching expansion at the sample's own
    moment estimates over the z grid.
    """
    if cfg.design not in SINGLE_STAGE_DESIGNS:
        raise DomainError("expansion cross-check covers single-stage designs only")
    population, spec, truth = _experiment_inputs(cfg)
    root = RngContract(cfg.seed)
    rng = derive_substream(derive_substream(root, _CH_SAMPLE), 0).generator()
    sample, _ = _draw_single_stage(population, spec, rng)
    rs = run_bootstrap(
        sample, spec, cfg.N, cfg.M, derive_substream(derive_substream(root, _CH_BOOTSTRAP), 0)
    )
    rows = []
    for z in cfg.z_grid:
        if cfg.design == POISSON:
            est = ht_poisson(sample)
            expansion = edgeworth_poisson(z, est.v_hat, est.mu3_hat, est.tau3_hat)
        elif cfg.design == SRS:
            est = ht_srs(sample, cfg.N)
            expansion = edgeworth_srs(
                z, sample.realized_n, cfg.N, math.sqrt(est.s2), est.mu3_hat
            )
        else:
            est = hh_pps(sample)
            expansion = edgeworth_pps(
                z, sample.realized_n, math.sqrt(est.s2), est.mu3_hat
            )
        boot_cdf = float((rs.t_stars <= z).mean())
        rows.append(
            {
                "design": cfg.design,
                "z": z,
                "boot_cdf": boot_cdf,
                "expansion": expansion,
                "Phi_z": std_normal_cdf(z),
                "M": cfg.M,
                "seed": cfg.seed,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Exact enumeration oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactMoments:
    """Exact design moments from full enumeration of the sample space."""

    e_y_hat: float
    var_y_hat: float
    e_v_hat: float
    t_values: np.ndarray
    t_probs: np.ndarray
    prob_total: float

    def t_cdf(self, z: float) -> float:
        """Exact CDF of T at z, conditional on T being defined."""
        mass = self.t_probs.sum()
        return float(self.t_probs[self.t_values <= z].sum() / mass)


def enumerate_design_moments(pop: FinitePopulation, spec: DesignSpec) -> ExactMoments:
    """Exact E[y_hat], Var(y_hat), E[v_hat], and the support of T by
    enumerating every possible sample with its design probability.

    Raises
    ------
    SpaceTooLarge
        When the sample space exceeds the documented caps
        (Poisson N <= 16, SRS C(N, n) <= 20000, PPS N^n <= 100000).
    """
    validate_design(pop, spec)
    N = pop.size
    outcomes = []
    if spec.kind == POISSON:
        if N > 16:
            raise SpaceTooLarge("Poisson enumeration capped at N = 16")
        pi = spec.inclusion_probs
        for mask in range(1 << N):
            idx = [i for i in range(N) if mask >> i & 1]
            prob = math.prod(pi[i] if mask >> i & 1 else 1.0 - pi[i] for i in range(N))
            if not idx:
                outcomes.append((prob, 0.0, 0.0, None))
                continue
            sample = _make_sample(pop, idx, pi[idx], POISSON)
            est = ht_poisson(sample)
            t = _maybe_t(est, pop.total)
            outcomes.append((prob, est.y_hat, est.v_hat, t))
    elif spec.kind == SRS:
        n = spec.sample_size
        n_subsets = math.comb(N, n)
        if n_subsets > 20_000:
            raise SpaceTooLarge("SRS enumeration capped at C(N, n) = 20000")
        prob = 1.0 / n_subsets
        probs_vec = np.full(n, n / N)
        for idx in itertools.combinations(range(N), n):
            sample = _make_sample(pop, list(idx), probs_vec, SRS)
            est = ht_srs(sample, N)
            outcomes.append((prob, est.y_hat, est.v_hat, _maybe_t(est, pop.total)))
    elif spec.kind == PPS:
        n = spec.sample_size
        if N**n > 100_000:
            raise SpaceTooLarge("PPS enumeration capped at N^n = 100000")
        p = spec.selection_probs
        for draw in itertools.product(range(N), repeat=n):
            idx = list(draw)
            prob = math.prod(p[i] for i in idx)
            sample = _make_sample(pop, idx, p[idx], PPS)
            est = hh_pps(sample)
            outcomes.append((prob, est.y_hat, est.v_hat, _maybe_t(est, pop.total)))
    else:
        raise SpaceTooLarge("use enumerate_two_stage_moments for two-stage designs")
    return _collect_outcomes(outcomes)


def _make_sample(pop, idx, probs, kind):
    from .core import DrawnSample

    return DrawnSample(np.asarray(idx, dtype=np.int64), pop.values[list(idx)], probs, kind)


def _maybe_t(est, truth: float):
    if est.v_hat > 0.0:
        return studentize(est.y_hat, truth, est.v_hat)
    return None


def _collect_outcomes(outcomes) -> ExactMoments:
    prob_total = math.fsum(o[0] for o in outcomes)
    e_y = math.fsum(o[0] * o[1] for o in outcomes)
    e_y2 = math.fsum(o[0] * o[1] * o[1] for o in outcomes)
    e_v = math.fsum(o[0] * o[2] for o in outcomes)
    with_t = sorted((o[3], o[0]) for o in outcomes if o[3] is not None)
    t_values = np.array([t for t, _ in with_t])
    t_probs = np.array([p for _, p in with_t])
    return ExactMoments(e_y, e_y2 - e_y * e_y, e_v, t_values, t_probs, prob_total)


@dataclass(frozen=True)
class ExactTwoStageMoments:
    e_y_tilde: float
    var_y_tilde: float
    e_v_tilde: float
    prob_total: float


def enumerate_two_stage_moments(
    cpop: ClusteredPopulation, spec: DesignSpec
) -> ExactTwoStageMoments:
    """Exhaustive two-stage oracle over (stage-1 pattern) x (within subsets).

    Feasible only for toy setups; the product space is capped at 10^6
    outcomes.
    """
    from .twostage import TwoStageSample
    from .core import DrawnSample as DS

    n1, n2 = spec.stage1_size, spec.stage2_size
    probs = stage1_probabilities(cpop, spec)
    H = cpop.H

    if spec.stage1_kind == POISSON:
        stage1_patterns = [
            ([i for i in range(H) if mask >> i & 1],
             math.prod(probs[i] if mask >> i & 1 else 1.0 - probs[i] for i in range(H)))
            for mask in range(1 << H)
        ]
    else:
        stage1_patterns = [
            (list(draw), math.prod(probs[i] for i in draw))
            for draw in itertools.product(range(H), repeat=n1)
        ]

    within_subsets = {
        i: list(itertools.combinations(range(cpop.clusters[i].size), n2))
        for i in range(H)
    }
    space = sum(
        math.prod(len(within_subsets[i]) for i in chosen) if chosen else 1
        for chosen, _ in stage1_patterns
    )
    if space > 1_000_000:
        raise SpaceTooLarge("two-stage enumeration capped at 1e6 outcomes")

    outcomes = []
    for chosen, p1 in stage1_patterns:
        if not chosen:
            # Empty Poisson first stage: estimator and variance are zero sums.
            outcomes.append((p1, 0.0, 0.0))
            continue
        per_cluster = [within_subsets[i] for i in chosen]
        weight = p1
        for subsets in per_cluster:
            weight /= len(subsets)
        for combo in itertools.product(*per_cluster):
            withins = tuple(
                DS(
                    np.asarray(subset, dtype=np.int64),
                    cpop.clusters[cid].values[list(subset)],
                    np.full(n2, n2 / cpop.clusters[cid].size),
                    SRS,
                )
                for cid, subset in zip(chosen, combo)
            )
            ts = TwoStageSample(
                np.asarray(chosen, dtype=np.int64),
                cpop.sizes[chosen],
                probs[chosen],
                withins,
                spec.stage1_kind,
                n1,
                n2,
            )
            est = estimate_two_stage(ts, cpop.N)
            outcomes.append((weight, est.y_tilde, est.v_tilde))
    prob_total = math.fsum(o[0] for o in outcomes)
    e_y = math.fsum(o[0] * o[1] for o in outcomes)
    e_y2 = math.fsum(o[0] * o[1] * o[1] for o in outcomes)
    e_v = math.fsum(o[0] * o[2] for o in outcomes)
    return ExactTwoStageMoments(e_y, e_y2 - e_y * e_y, e_v, prob_total)


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def rows_to_csv(rows: list[dict]) -> str:
    """Render rows with a fixed column order and 6-significant-digit floats."""
    if not rows:
        return ""
    columns = list(rows[0].keys())
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(format_cell(row.get(c)) for c in columns))
    return "\n".join(lines) + "\n"
