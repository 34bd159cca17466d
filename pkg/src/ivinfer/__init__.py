"""Instrumental variables regression: k-class estimation, weak-instrument-
robust tests, misspecification diagnostics, and confidence sets by test
inversion."""

__version__ = "0.1.0"

from ivinfer.confsets import (
    BoundedEmpty,
    ConfidenceSet,
    GridConfig,
    bounded_empty_predicates,
    equivalent_levels,
    invert_closed_form,
    invert_grid,
)
from ivinfer.data import (
    CARD_COLSPEC,
    ColSpec,
    DataSet,
    absorb_exogenous,
    assemble_dataset,
    build_card_dataset,
    load_card_dataset,
    read_fixed_width,
    residualize,
)
from ivinfer.diagnostics import (
    RPConfig,
    aggregate_p_median,
    j_test,
    rank_test,
    rank_test_general,
    residual_prediction_test,
)
from ivinfer.distributions import (
    chi2_cdf,
    chi2_quantile,
    chi2_sf,
    gamma_clr_cdf_quad,
    gamma_clr_cdf_series,
    gamma_clr_quantile,
    normal_cdf,
    normal_sf,
)
from ivinfer.exceptions import ConfigError, ConvergenceError, IVInferError, RankDeficiencyError
from ivinfer.inference import TestResult, ar_test, clr_test, lm_test, lr_test, wald_test
from ivinfer.kclass import KClassFit, KClassSpec, fit_kclass, kappa_liml, pi_liml
from ivinfer.linalg import (
    GenEigResult,
    gen_eig_smallest,
    kappa_definiteness,
    oproj,
    proj,
    project_quadric,
)
from ivinfer.quadric import ALL_SPACE, Quadric

__all__ = [
    "ALL_SPACE",
    "BoundedEmpty",
    "CARD_COLSPEC",
    "ColSpec",
    "ConfidenceSet",
    "ConfigError",
    "ConvergenceError",
    "DataSet",
    "GenEigResult",
    "GridConfig",
    "IVInferError",
    "KClassFit",
    "KClassSpec",
    "Quadric",
    "RPConfig",
    "RankDeficiencyError",
    "TestResult",
    "absorb_exogenous",
    "aggregate_p_median",
    "ar_test",
    "assemble_dataset",
    "bounded_empty_predicates",
    "build_card_dataset",
    "chi2_cdf",
    "chi2_quantile",
    "chi2_sf",
    "clr_test",
    "equivalent_levels",
    "fit_kclass",
    "gamma_clr_cdf_quad",
    "gamma_clr_cdf_series",
    "gamma_clr_quantile",
    "gen_eig_smallest",
    "invert_closed_form",
    "invert_grid",
    "j_test",
    "kappa_definiteness",
    "kappa_liml",
    "lm_test",
    "load_card_dataset",
    "lr_test",
    "normal_cdf",
    "normal_sf",
    "oproj",
    "pi_liml",
    "proj",
    "project_quadric",
    "rank_test",
    "rank_test_general",
    "read_fixed_width",
    "residual_prediction_test",
    "residualize",
    "wald_test",
]
