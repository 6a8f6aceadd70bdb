"""Design-based bootstrap-t inference for finite-population totals and means.

Supports Poisson, simple random, and with-replacement size-proportional
sampling, plus their two-stage cluster compositions; ships second-order
expansion cross-checks, exact enumeration oracles, and a reproducible
Monte Carlo harness.
"""

from .core import (
    BOOTSTRAP_T,
    POISSON,
    PPS,
    SRS,
    TWO_STAGE,
    WALD_TYPE,
    ConfidenceInterval,
    DesignSpec,
    DrawnSample,
    FinitePopulation,
    RngContract,
    SvybootError,
    as_contract,
    derive_substream,
    load_population_csv,
    validate_design,
)
from .designs import (
    CountVector,
    draw_binomial,
    draw_multinomial,
    draw_poisson_sample,
    draw_pps_sample,
    draw_sample,
    draw_srs_sample,
)
from .estimators import EstimateBundle, estimate, hh_pps, ht_poisson, ht_srs, studentize
from .bootstrap import (
    BootPopulation,
    ReplicateSet,
    bootstrap_ci,
    empirical_quantile,
    rebuild_poisson,
    rebuild_pps,
    rebuild_srs,
    resample_poisson,
    resample_pps_fast,
    resample_srs_fast,
    run_bootstrap,
    wald_ci,
)
from .edgeworth import (
    edgeworth_poisson,
    edgeworth_pps,
    edgeworth_srs,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)
from .twostage import (
    ClusteredPopulation,
    TwoStageEstimate,
    TwoStageSample,
    bootstrap_two_stage,
    draw_two_stage,
    estimate_two_stage,
    load_clustered_csv,
)
from .harness import (
    ExperimentConfig,
    enumerate_design_moments,
    enumerate_two_stage_moments,
    gen_population_single,
    gen_population_two_stage,
    run_coverage_experiment,
    run_distribution_experiment,
    run_edgeworth_check,
)

__version__ = "0.1.0"
