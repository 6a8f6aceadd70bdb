"""Shared domain types, input validation, and the deterministic RNG contract.

Everything downstream (design draws, estimators, bootstrap engines, the
simulation harness) builds on the types defined here.  All containers are
immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF

PROB_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class SvybootError(Exception):
    """Base class for all package errors."""


class LengthMismatch(SvybootError):
    """Parallel vectors (values, probabilities, ...) disagree in length."""


class ProbOutOfRange(SvybootError):
    """An inclusion/selection probability lies outside the open unit interval."""


class ProbsDontSumToOne(SvybootError):
    """Selection probabilities do not sum to one within tolerance."""


class SampleTooLarge(SvybootError):
    """Requested sample size is not smaller than the population size."""


class InvalidProbs(SvybootError):
    """A probability vector handed to a sampler is malformed."""


class EmptySample(SvybootError):
    """A Poisson draw selected no units; the caller decides whether to redraw."""


class TooFewUnits(SvybootError):
    """An estimator needs at least two observations."""


class ZeroVariance(SvybootError):
    """A variance estimate is non-positive where a positive one is required."""


class DegenerateReplicate(SvybootError):
    """A bootstrap replicate produced zero variance and must be redrawn."""


class TooManyDegenerates(SvybootError):
    """A replicate exhausted its redraw budget."""


class DegenerateNormalizer(SvybootError):
    """The bootstrap selection-probability normalizer collapsed to zero."""


class EmptyFirstStage(SvybootError):
    """Poisson first stage selected no cluster; the harness redraws."""


class TooFewClusters(SvybootError):
    """The first-stage variance estimator needs at least two cluster draws."""


class PiOutOfRange(SvybootError):
    """A derived inclusion probability left the open unit interval."""


class SpaceTooLarge(SvybootError):
    """The exact-enumeration oracle refuses a sample space this big."""


class DomainError(SvybootError):
    """Function argument outside its mathematical domain."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _freeze(a) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FinitePopulation:
    """A fixed finite population of study values, optionally with size measures.

    Parameters
    ----------
    values : array_like
        The study variable, one entry per population unit.
    size_measures : array_like, optional
        Positive auxiliary sizes used to derive inclusion/selection
        probabilities (one per unit).
    """

    values: np.ndarray
    size_measures: np.ndarray | None = None

    def __post_init__(self):
        vals = _freeze(np.atleast_1d(self.values))
        if vals.ndim != 1 or vals.size < 2:
            raise LengthMismatch("population needs at least 2 scalar values")
        if not np.all(np.isfinite(vals)):
            raise DomainError("population values must be finite")
        object.__setattr__(self, "values", vals)
        if self.size_measures is not None:
            z = _freeze(np.atleast_1d(self.size_measures))
            if z.shape != vals.shape:
                raise LengthMismatch("size measures must match values in length")
            if not np.all(np.isfinite(z)) or np.any(z <= 0):
                raise DomainError("size measures must be finite and positive")
            object.__setattr__(self, "size_measures", z)

    @property
    def size(self) -> int:
        return int(self.values.size)

    @property
    def total(self) -> float:
        return float(math.fsum(self.values.tolist()))

    @property
    def mean(self) -> float:
        return self.total / self.size


POISSON = "poisson"
SRS = "srs"
PPS = "pps"
TWO_STAGE = "two_stage"


@dataclass(frozen=True)
class DesignSpec:
    """Which sampling design to run, with its parameters.

    Use the classmethod constructors; the raw constructor performs no
    cross-field checking (that is :func:`validate_design`'s job).
    """

    kind: str
    inclusion_probs: np.ndarray | None = None
    sample_size: int | None = None
    selection_probs: np.ndarray | None = None
    stage1_kind: str | None = None
    stage1_size: int | None = None
    stage2_size: int | None = None

    def __post_init__(self):
        if self.inclusion_probs is not None:
            object.__setattr__(self, "inclusion_probs", _freeze(self.inclusion_probs))
        if self.selection_probs is not None:
            object.__setattr__(self, "selection_probs", _freeze(self.selection_probs))

    @classmethod
    def poisson(cls, inclusion_probs) -> "DesignSpec":
        return cls(kind=POISSON, inclusion_probs=np.asarray(inclusion_probs, dtype=float))

    @classmethod
    def srs(cls, sample_size: int) -> "DesignSpec":
        return cls(kind=SRS, sample_size=int(sample_size))

    @classmethod
    def pps(cls, selection_probs, sample_size: int) -> "DesignSpec":
        return cls(
            kind=PPS,
            selection_probs=np.asarray(selection_probs, dtype=float),
            sample_size=int(sample_size),
        )

    @classmethod
    def pps_from_weights(cls, weights, sample_size: int) -> "DesignSpec":
        """Build a PPS spec from raw positive weights, normalized once here."""
        w = np.asarray(weights, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ProbOutOfRange("weights must be finite and positive")
        return cls.pps(w / math.fsum(w.tolist()), sample_size)

    @classmethod
    def two_stage(cls, stage1_kind: str, n1: int, n2: int) -> "DesignSpec":
        return cls(
            kind=TWO_STAGE,
            stage1_kind=stage1_kind,
            stage1_size=int(n1),
            stage2_size=int(n2),
        )


@dataclass(frozen=True)
class DrawnSample:
    """One realized sample: unit indices, values, and per-unit probabilities.

    ``probs`` holds first-order inclusion probabilities under Poisson/SRS and
    per-draw selection probabilities under PPS (where ``unit_indices`` may
    repeat).
    """

    unit_indices: np.ndarray
    values: np.ndarray
    probs: np.ndarray
    kind: str

    def __post_init__(self):
        idx = np.array(self.unit_indices, dtype=np.int64, copy=True)
        idx.setflags(write=False)
        object.__setattr__(self, "unit_indices", idx)
        object.__setattr__(self, "values", _freeze(self.values))
        object.__setattr__(self, "probs", _freeze(self.probs))
        n = idx.size
        if self.values.size != n or self.probs.size != n:
            raise LengthMismatch("sample vectors must have equal length")
        if n and (self.probs.min() <= 0.0 or self.probs.max() >= 1.0):
            raise ProbOutOfRange("sample probabilities must lie in (0, 1)")
        if self.kind in (POISSON, SRS) and np.unique(idx).size != n:
            raise LengthMismatch("without-replacement sample has repeated indices")

    @property
    def realized_n(self) -> int:
        return int(self.unit_indices.size)


WALD_TYPE = "wald"
BOOTSTRAP_T = "bootstrap_t"


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float
    method: str

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise DomainError("confidence level must lie in (0, 1)")
        if self.lower > self.upper:
            raise DomainError("interval endpoints out of order")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


# ---------------------------------------------------------------------------
# Deterministic RNG streams
# ---------------------------------------------------------------------------


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _U64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _U64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngContract:
    """Addresses one reproducible random stream.

    The same ``(master_seed, stream_id)`` pair always yields the same variate
    sequence; distinct stream ids key statistically independent counter-based
    (Philox) streams, so replicates can run on any worker in any order without
    changing results.
    """

    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) <= _U64):
                raise DomainError(f"{name} must be an unsigned 64-bit integer")
            object.__setattr__(self, name, int(v))

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def derive_substream(master: RngContract, replicate_index: int) -> RngContract:
    """Deterministically derive the stream for one replicate.

    For a fixed ``master`` the map is injective in ``replicate_index``
    (a bijective 64-bit mix applied to a shifted copy of the index), so no two
    replicates can share a stream.
    """
    if replicate_index < 0:
        raise DomainError("replicate_index must be non-negative")
    mixed = _splitmix64(_splitmix64(master.stream_id) ^ ((replicate_index + 0xD1B54A32D192ED03) & _U64))
    return RngContract(master.master_seed, mixed)


def as_contract(seed) -> RngContract:
    """Coerce an int seed or an existing contract into an RngContract."""
    if isinstance(seed, RngContract):
        return seed
    return RngContract(int(seed))


class StreamPool:
    """Re-keys one Philox engine per (single-threaded) worker.

    Produces the exact same variate sequences as ``RngContract.generator()``
    (verified in tests) while skipping the per-construction entropy call,
    which dominates replicate cost in tight bootstrap loops.  The returned
    generator aliases the pool's engine: finish with it before asking for the
    next stream.
    """

    def __init__(self):
        self._bg = np.random.Philox(seed=0)
        self._gen = np.random.Generator(self._bg)
        self._state = self._bg.state
        self._state["buffer_pos"] = 4
        self._state["has_uint32"] = 0
        self._state["uinteger"] = 0

    def generator(self, contract: RngContract) -> np.random.Generator:
        st = self._state
        inner = st["state"]
        inner["key"][0] = contract.master_seed
        inner["key"][1] = contract.stream_id
        inner["counter"][:] = 0
        self._bg.state = st
        return self._gen


_pool: StreamPool | None = None


def pooled_generator(contract: RngContract) -> np.random.Generator:
    """This process's pooled generator, re-keyed to ``contract``.

    Internal enginery for replicate loops; the previous stream handed out by
    this pool stops being valid the moment a new one is requested.
    """
    global _pool
    if _pool is None:
        _pool = StreamPool()
    return _pool.generator(contract)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_open_unit(p: np.ndarray, what: str) -> None:
    if np.any(~np.isfinite(p)):
        raise ProbOutOfRange(f"{what} must be finite")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ProbOutOfRange(f"every {what} must lie strictly inside (0, 1)")


def validate_design(pop: FinitePopulation, spec: DesignSpec):
    """Check that ``spec`` is a valid design for ``pop``; return both unchanged.

    Raises
    ------
    ProbOutOfRange, ProbsDontSumToOne, SampleTooLarge, LengthMismatch
        When the corresponding invariant fails.
    """
    N = pop.size
    if spec.kind == POISSON:
        pi = spec.inclusion_probs
        if pi is None or pi.size != N:
            raise LengthMismatch("Poisson design needs one inclusion probability per unit")
        _check_open_unit(pi, "inclusion probability")
    elif spec.kind == SRS:
        n = spec.sample_size
        if n is None or n < 1:
            raise LengthMismatch("SRS design needs a positive sample size")
        if n >= N:
            raise SampleTooLarge(f"SRS sample size {n} must be < N={N}")
    elif spec.kind == PPS:
        p = spec.selection_probs
        n = spec.sample_size
        if p is None or p.size != N:
            raise LengthMismatch("PPS design needs one selection probability per unit")
        if n is None or n < 1:
            raise LengthMismatch("PPS design needs a positive sample size")
        if n >= N:
            raise SampleTooLarge(f"PPS sample size {n} must be < N={N}")
        _check_open_unit(p, "selection probability")
        total = math.fsum(p.tolist())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ProbsDontSumToOne(f"selection probabilities sum to {total!r}, not 1")
    elif spec.kind == TWO_STAGE:
        if spec.stage1_kind not in (POISSON, PPS):
            raise LengthMismatch("two-stage first stage must be poisson or pps")
        if spec.stage1_size is None or spec.stage1_size < 1:
            raise LengthMismatch("two-stage design needs a positive first-stage size")
        if spec.stage2_size is None or spec.stage2_size < 1:
            raise LengthMismatch("two-stage design needs a positive second-stage size")
    else:
        raise LengthMismatch(f"unknown design kind {spec.kind!r}")
    return pop, spec


# ---------------------------------------------------------------------------
# Population CSV (header: y[,z])
# ---------------------------------------------------------------------------


def load_population_csv(path) -> FinitePopulation:
    """Read a population file with header ``y`` or ``y,z``; rejects NaN/inf."""
    ys: list[float] = []
    zs: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[0].strip() != "y":
            raise DomainError("population CSV must start with header 'y' or 'y,z'")
        has_z = len(header) > 1 and header[1].strip() == "z"
        for row in reader:
            if not row:
                continue
            y = float(row[0])
            if not math.isfinite(y):
                raise DomainError("population CSV contains a non-finite y value")
            ys.append(y)
            if has_z:
                z = float(row[1])
                if not math.isfinite(z):
                    raise DomainError("population CSV contains a non-finite z value")
                zs.append(z)
    return FinitePopulation(np.array(ys), np.array(zs) if zs else None)


def save_population_csv(path, pop: FinitePopulation) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if pop.size_measures is None:
            writer.writerow(["y"])
            for y in pop.values:
                writer.writerow([repr(float(y))])
        else:
            writer.writerow(["y", "z"])
            for y, z in zip(pop.values, pop.size_measures):
                writer.writerow([repr(float(y)), repr(float(z))])
