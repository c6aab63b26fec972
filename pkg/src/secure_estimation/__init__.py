"""Secure Bayesian parameter estimation under causative attacks."""

__version__ = "0.1.0"

from .bayes import (  # noqa: E402
    AbsoluteError,
    Baseline,
    ModelEstimate,
    ParameterDomainError,
    SquaredError,
    attack_free_baseline,
    gaussian_invchisq_estimate,
    optimal_estimates,
    optimal_model_estimate,
    posterior_cost,
)
from .families import (  # noqa: E402
    GaussianConvolvedUniform,
    GaussianMeanShift,
    GaussianPrior,
    GaussianVarianceOnly,
    InverseChiSquaredPrior,
    PointMassPrior,
    UniformPrior,
    count_density_evaluations,
)
from .model import (  # noqa: E402
    AttackScenario,
    ContractError,
    ModelSpace,
    NoAttackScenarios,
    ObservationBatch,
    log_conditional_density,
    marginal_likelihood,
    mixture_density,
    sample,
)
from .numerics import (  # noqa: E402
    BracketError,
    MonteCarloConfig,
    NumericalError,
    bisect,
    empirical_quantile,
    golden_section_min,
    mc_expectation,
    simplex_grid,
)
from .optimal import (  # noqa: E402
    ConfigurationError,
    DecisionTable,
    DetectionRule,
    FeasibilityError,
    FixedHypothesis,
    LagrangeVector,
    LagrangianScore,
    PerformancePoint,
    evaluate_rule,
    feasibility_floor,
    feasibility_R,
    lagrangian_scores,
    solve_P,
    trace_performance_region,
)
from .scalable import (  # noqa: E402
    BinaryDetector,
    CoordinateEstimate,
    ExponentReport,
    MarginalLR,
    OptimalBayes,
    PipelineConfig,
    ReliabilityTest,
    calibrate_np_threshold,
    calibrate_pipeline,
    calibrate_reliability,
    chernoff_information,
    coordinate_estimate,
    empirical_exponent,
    fuse,
    isolate_lr,
    isolate_optimal,
    np_detect,
    predicted_exponent,
    scalable_pipeline,
)
