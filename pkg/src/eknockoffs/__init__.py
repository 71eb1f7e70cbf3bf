"""Derandomized model-X knockoffs with e-values."""

from .exceptions import *  # noqa: F401,F403
from .extensions import (
    KlDiagnostic,
    MultiEnvStatistics,
    SideInfo,
    adaptive_knockoff_evalues,
    derandomized_fixed_x,
    derandomized_mekf,
    derandomized_side_info,
    empirical_kl,
    multienv_statistic_cst,
    multienv_statistic_pcst,
    weighted_evalues,
)
from .filter import (
    EValueVector,
    SelectionResult,
    ThresholdResult,
    derandomized_knockoffs,
    ebh,
    knockoff_evalues,
    knockoff_filter,
    knockoff_threshold,
    sharpness_diagnostic,
)
from .harness import (
    ExperimentConfig,
    ExperimentTruth,
    MetricsReport,
    baseline_frequency,
    generate_dataset,
    run_experiment,
    score_selection,
    selection_variability,
)
from .ingest import Dataset, load_csv, real_data_pipeline
from .knockoffs import (
    FixedXDesign,
    GaussianModel,
    equicorrelated_s,
    exchangeability_diagnostic,
    fixed_x_knockoff,
    sample_knockoff_mx,
    second_order_model,
)
from .numerics import TOL, RngStream, binom_cdf_pmf, cholesky, min_eigenvalue
from .stats import ImportanceVector, LassoFit, LcdStatistic, cv_lasso, fista_lasso, lcd_statistic

__version__ = "0.1.0"
