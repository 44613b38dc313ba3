"""Rare-event yield estimation with variationally fitted
importance-sampling proposals, plus mean-shift-based design optimization.
"""
from .clustering import ClusteringResult, kmeans, select_clusters, silhouette_score
from .distributions import (
    GaussianProposal,
    MixtureProposal,
    SkewNormalProposal,
    log_density_standard_normal,
    ridge_cholesky,
)
from .errors import (
    ConfigError,
    ContractError,
    EstimationError,
    FitError,
    InitializationError,
    SimulationError,
)
from .fitting import (
    FailureSample,
    FailureSet,
    FitConfig,
    FitTier,
    fit_alpha,
    fit_mixture,
    full_sss_covariance,
    normalized_weights,
    scalar_sss_variance,
    true_omsv,
)
from .optimize import (
    DesignEvaluation,
    OMSVMode,
    OptimizeConfig,
    OptimizeTrace,
    TracePoint,
    omsv_of_design,
    run_variational_asais,
)
from .rng import substream
from .sampling import (
    BeyondConfig,
    CompensatedSum,
    EstimatorState,
    IterationRow,
    MCConfig,
    MNISConfig,
    OnionConfig,
    OnionResult,
    RunReport,
    fom,
    is_step,
    mn_omsv,
    onion_init,
    run_beyond,
    run_mc,
    run_mnis,
)
from .testbench import (
    ExternalBench,
    ParameterizedBenchFamily,
    Testbench,
    external_bench,
    intersection_bench,
    linear_bench,
    mc_probability,
    sphere_bench,
    union_bench,
)

__version__ = "0.1.0"

__all__ = [
    "BeyondConfig",
    "ClusteringResult",
    "CompensatedSum",
    "ConfigError",
    "ContractError",
    "DesignEvaluation",
    "EstimationError",
    "EstimatorState",
    "ExternalBench",
    "FailureSample",
    "FailureSet",
    "FitConfig",
    "FitError",
    "FitTier",
    "GaussianProposal",
    "InitializationError",
    "IterationRow",
    "MCConfig",
    "MNISConfig",
    "MixtureProposal",
    "OMSVMode",
    "OnionConfig",
    "OnionResult",
    "OptimizeConfig",
    "OptimizeTrace",
    "ParameterizedBenchFamily",
    "RunReport",
    "SimulationError",
    "SkewNormalProposal",
    "Testbench",
    "TracePoint",
    "external_bench",
    "fit_alpha",
    "fit_mixture",
    "fom",
    "full_sss_covariance",
    "intersection_bench",
    "is_step",
    "kmeans",
    "linear_bench",
    "log_density_standard_normal",
    "mc_probability",
    "mn_omsv",
    "normalized_weights",
    "omsv_of_design",
    "onion_init",
    "ridge_cholesky",
    "run_beyond",
    "run_mc",
    "run_mnis",
    "run_variational_asais",
    "scalar_sss_variance",
    "select_clusters",
    "silhouette_score",
    "sphere_bench",
    "substream",
    "true_omsv",
    "union_bench",
]
