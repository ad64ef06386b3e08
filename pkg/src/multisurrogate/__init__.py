"""Many least-squares surrogates from one random design.

Fit a whole family of responses with a single factorization of the
empirical Gram matrix, measure excess risk against population optima,
integrate with control variates, and check convergence rates empirically.
"""

from .applications import (
    CdfEstimate,
    QuantileEstimate,
    QuantileTask,
    SaaResult,
    SaaTask,
    estimate_cdf,
    estimate_quantile,
    isotonic_projection,
    saa_minimize,
)
from .config import ConfigError, ExperimentConfig, parse_config, serialize
from .control_variates import (
    ControlVariateSet,
    CVEstimate,
    cv_estimate,
    cv_weights,
    oracle_estimate,
    uniform_cv_rate_check,
    vanilla_mc,
)
from .diagnostics import DiagnosticsReport, diagnose, residual_envelope_check
from .features import Box, DimensionSchedule, DomainError, FeatureMap, LinearFeatureMap, make_basis
from .linalg import (
    CholeskyFactor,
    FlopCounter,
    GramMatrix,
    LeverageProfile,
    empirical_gram,
    factorize,
    leverage,
    min_eigenvalue,
    whiten,
)
from .population import OracleResult, PopulationModel
from .risk import (
    RateCurve,
    RiskReport,
    excess_risk,
    single_response_rate_check,
    worst_case_rate_check,
    worst_case_risk,
)
from .runner import RunManifest, __version__, run
from .surrogate import (
    Design,
    FitResult,
    ResponseFamily,
    design_from_points,
    draw_design,
    fit_many,
    fit_responses,
    population_beta,
    population_betas,
    predict,
)
