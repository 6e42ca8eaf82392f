"""Maximum-likelihood factor analysis on incomplete data and criteria for
choosing the number of factors (AIC, BIC, CAIC, HBIC)."""

from .criteria import ALL_CRITERIA, CriterionKind, SelectionReport, criterion_score, penalty, select_k
from .estimation import (
    Algorithm,
    EstimationError,
    FitConfig,
    FitResult,
    ecm_posterior_moments,
    ecme_expected_cov,
    ecme_loading_step,
    ecme_mu_step,
    ecme_psi_step,
    fit,
    fit_ecm,
    fit_ecme,
    init_pca,
)
from .missing import (
    CsvParseError,
    MaskedMatrix,
    MissingDataError,
    MissingRates,
    apply_mcar_mask,
    from_dense,
    mean_impute,
    read_csv,
    sorted_counts,
    write_csv,
)
from .model import (
    FactorParams,
    ModelDims,
    NotPositiveDefiniteError,
    build_sigma,
    dof,
    dof_per_variable,
    k_max,
    loglik_complete,
    loglik_observed,
)
from .simulation import (
    StudyReport,
    SyntheticDesign,
    build_design,
    draw_dataset,
    run_study,
    scree_eigenvalues,
)

__version__ = "0.1.0"
