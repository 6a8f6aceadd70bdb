"""Command-line entry points.

Subcommands
-----------
``simulate coverage``     Monte Carlo coverage/length table for one design.
``simulate distribution`` P_z / Phi(z) / Boot_z table on a z grid.
``ci``                    Wald and bootstrap-t intervals for one sample file.
``oracle``                Exact enumeration report for a small design.

A JSON config file (``--config``) may pre-populate any flag; explicit flags
override the file.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .bootstrap import bootstrap_ci, run_bootstrap, wald_ci
from .core import (
    POISSON,
    PPS,
    SRS,
    DesignSpec,
    DrawnSample,
    RngContract,
    load_population_csv,
    validate_design,
)
from .estimators import estimate
from .harness import (
    DEFAULT_Z_GRID,
    ExperimentConfig,
    enumerate_design_moments,
    poisson_probs_from_sizes,
    pps_probs_from_sizes,
    rows_to_csv,
    run_coverage_experiment,
    run_distribution_experiment,
)

_DESIGN_CHOICES = ["poisson", "srs", "pps", "two-stage-poisson", "two-stage-pps"]


def _canonical_design(name: str) -> str:
    return name.replace("-", "_")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--design", choices=_DESIGN_CHOICES, help="sampling design")
    parser.add_argument("--n0", type=int, help="(expected) single-stage sample size")
    parser.add_argument("--n1", type=int, help="first-stage sample size (two-stage)")
    parser.add_argument("--n2", type=int, help="within-cluster sample size (two-stage)")
    parser.add_argument("--N", type=int, default=500, help="population size")
    parser.add_argument("--H", type=int, default=100, help="cluster count (two-stage)")
    parser.add_argument("--c0", type=int, default=40, help="minimum cluster size")
    parser.add_argument("--M", type=int, default=1000, help="bootstrap replicates")
    parser.add_argument("--reps", type=int, default=1000, help="Monte Carlo repetitions")
    parser.add_argument("--level", type=float, default=0.90, help="confidence level")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--workers", type=int, default=1, help="parallel workers")
    parser.add_argument("--out", help="output CSV path (default: stdout)")
    parser.add_argument("--config", help="JSON file supplying defaults for any flag")


def _apply_config_file(
    args: argparse.Namespace, argv: list[str], parser: argparse.ArgumentParser
) -> None:
    if not getattr(args, "config", None):
        return
    with open(args.config) as fh:
        overrides = json.load(fh)
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest):
            parser.error(f"unknown config key {key!r}")
        flags = {"--" + dest, "--" + dest.replace("_", "-")}
        explicit = any(a in flags or a.split("=", 1)[0] in flags for a in argv)
        if not explicit:  # command-line flags win over the file
            setattr(args, dest, value)


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    design = _canonical_design(args.design or "")
    if not design:
        raise SystemExit("--design is required")
    z_grid = tuple(float(z) for z in str(args.z_grid).split(",")) if getattr(args, "z_grid", None) else DEFAULT_Z_GRID
    return ExperimentConfig(
        design=design,
        n0=args.n0,
        n1=args.n1,
        n2=args.n2,
        N=args.N,
        H=args.H,
        c0=args.c0,
        M=args.M,
        reps=args.reps,
        level=args.level,
        seed=args.seed,
        z_grid=z_grid,
        workers=args.workers,
    )


def _emit(rows: list[dict], out: str | None) -> None:
    text = rows_to_csv(rows)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _design_from_args(args, pop) -> DesignSpec:
    design = _canonical_design(args.design)
    if design == POISSON:
        spec = DesignSpec.poisson(poisson_probs_from_sizes(pop, args.n0))
    elif design == SRS:
        spec = DesignSpec.srs(args.n0)
    elif design == PPS:
        spec = DesignSpec.pps(pps_probs_from_sizes(pop), args.n0)
    else:
        raise SystemExit("ci/oracle support single-stage designs only")
    validate_design(pop, spec)
    return spec


def _load_sample(path: str, pop, spec: DesignSpec) -> DrawnSample:
    """Sample CSV: column ``index`` (0-based into the population file)."""
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader)
        if header[0].strip() != "index":
            raise SystemExit("sample CSV must start with header 'index'")
        idx = np.array([int(row[0]) for row in reader if row], dtype=np.int64)
    if spec.kind == POISSON:
        probs = spec.inclusion_probs[idx]
    elif spec.kind == SRS:
        probs = np.full(idx.size, spec.sample_size / pop.size)
    else:
        probs = spec.selection_probs[idx]
    return DrawnSample(idx, pop.values[idx], probs, spec.kind)


def cmd_simulate(args: argparse.Namespace) -> None:
    cfg = _experiment_config(args)
    if args.what == "coverage":
        rows = run_coverage_experiment(cfg)
    else:
        rows = run_distribution_experiment(cfg)
    _emit(rows, args.out)


def cmd_ci(args: argparse.Namespace) -> None:
    pop = load_population_csv(args.population)
    spec = _design_from_args(args, pop)
    sample = _load_sample(args.sample, pop, spec)
    est = estimate(sample, pop.size)
    y_mean = est.y_hat / pop.size
    v_mean = est.v_hat / pop.size**2
    rs = run_bootstrap(sample, spec, pop.size, args.M, RngContract(args.seed))
    rows = []
    for ci in (wald_ci(y_mean, v_mean, args.level), bootstrap_ci(y_mean, v_mean, rs, args.level)):
        rows.append(
            {
                "method": ci.method,
                "level": ci.level,
                "estimate": y_mean,
                "std_error": math.sqrt(v_mean),
                "lower": ci.lower,
                "upper": ci.upper,
                "length": ci.length,
                "M": args.M,
                "seed": args.seed,
            }
        )
    _emit(rows, args.out)


def cmd_oracle(args: argparse.Namespace) -> None:
    pop = load_population_csv(args.population)
    spec = _design_from_args(args, pop)
    exact = enumerate_design_moments(pop, spec)
    rows = [
        {
            "design": _canonical_design(args.design),
            "E_y_hat": exact.e_y_hat,
            "Var_y_hat": exact.var_y_hat,
            "E_v_hat": exact.e_v_hat,
            "prob_total": exact.prob_total,
            "population_total": pop.total,
            "t_support_size": int(exact.t_values.size),
        }
    ]
    _emit(rows, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svyboot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    sim.add_argument("what", choices=["coverage", "distribution"])
    _add_common(sim)
    sim.add_argument(
        "--z-grid",
        dest="z_grid",
        help="comma-separated z values (distribution only)",
    )
    sim.set_defaults(func=cmd_simulate)

    ci = sub.add_parser("ci", help="confidence intervals for one sample")
    ci.add_argument("--population", required=True, help="population CSV (y[,z])")
    ci.add_argument("--sample", required=True, help="sample CSV (index)")
    _add_common(ci)
    ci.set_defaults(func=cmd_ci)

    oracle = sub.add_parser("oracle", help="exact enumeration report")
    oracle.add_argument("--population", required=True, help="population CSV (y[,z])")
    _add_common(oracle)
    oracle.set_defaults(func=cmd_oracle)

    return parser


def main(argv: list[str] | None = None) -> None:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_config_file(args, argv, parser)
    args.func(args)


if __name__ == "__main__":
    main()
