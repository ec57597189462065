"""Maximum-likelihood estimation of high-dimensional factor models.

Quasi-ML estimation of low-rank-plus-diagonal covariance models via EM,
with five identification normalizations, factor-score estimation, plug-in
asymptotic inference, a principal-components baseline and a reproducible
Monte Carlo harness.
"""

from .em import EMConfig, EMTrace, FactorEstimate, em_step, fit, ic3_rotation
from .errors import (
    FactorModelError,
    FirstRowsUnsuitableError,
    HarnessError,
    IllConditionedError,
    InvalidInputError,
    InvalidKurtosisError,
    NonIdentifiedOrderingError,
    RankError,
    UnsupportedICError,
)
from .identify import align_to_truth, to_ic1, to_ic2, to_ic4, to_ic5, verify_estimate
from .inference import (
    FactorCovCov,
    diag_selector,
    dup_matrix,
    estimate_excess_kurtosis,
    gen_dup_bar,
    gen_dup_tilde,
    idio_var_cov,
    loading_cov,
    mff_cov,
    score_cov,
    vech,
    veck,
)
from .model import (
    Dataset,
    FactorParams,
    IdentificationTag,
    foc_residuals,
    log_likelihood,
    read_dataset_csv,
    sample_second_moment,
    transpose_representation,
)
from .montecarlo import (
    CellStats,
    MonteCarloReport,
    RateCheckReport,
    SimConfig,
    canonical_correlations,
    generate,
    ic3_truth_rotation,
    pc_truth_rotation,
    report_to_csv,
    report_to_json,
    run_rate_check,
    run_table2,
)
from .pca import pc_fit, pc_objective, pc_sandwich_cov
from .scores import FactorScores, gls_scores, projection_scores, score_gap

__version__ = "0.1.0"

__all__ = [
    "CellStats",
    "Dataset",
    "EMConfig",
    "EMTrace",
    "FactorCovCov",
    "FactorEstimate",
    "FactorModelError",
    "FactorParams",
    "FactorScores",
    "FirstRowsUnsuitableError",
    "HarnessError",
    "IdentificationTag",
    "IllConditionedError",
    "InvalidInputError",
    "InvalidKurtosisError",
    "MonteCarloReport",
    "NonIdentifiedOrderingError",
    "RankError",
    "RateCheckReport",
    "SimConfig",
    "UnsupportedICError",
    "align_to_truth",
    "canonical_correlations",
    "diag_selector",
    "dup_matrix",
    "em_step",
    "estimate_excess_kurtosis",
    "fit",
    "foc_residuals",
    "gen_dup_bar",
    "gen_dup_tilde",
    "generate",
    "gls_scores",
    "ic3_rotation",
    "ic3_truth_rotation",
    "idio_var_cov",
    "loading_cov",
    "log_likelihood",
    "mff_cov",
    "pc_fit",
    "pc_objective",
    "pc_sandwich_cov",
    "pc_truth_rotation",
    "projection_scores",
    "read_dataset_csv",
    "report_to_csv",
    "report_to_json",
    "run_rate_check",
    "run_table2",
    "sample_second_moment",
    "score_cov",
    "score_gap",
    "to_ic1",
    "to_ic2",
    "to_ic4",
    "to_ic5",
    "transpose_representation",
    "vech",
    "veck",
    "verify_estimate",
]
