"""Multivariate Fay-Herriot small area estimation.

Empirical best linear unbiased prediction in an area-level model whose
random-effect covariance matrix is fully unknown and estimated by moments,
with second-order mean squared error matrices and a reproducible Monte
Carlo harness.
"""

from .covariance import (
    CovarianceEstimate,
    estimate_covariance,
    ols_beta,
    psd_project,
    psi0_bias,
    psi_pr0,
    psi_pr1,
    univariate_psi,
)
from .dataio import load_dataset, write_dataset
from .errors import (
    DimensionMismatch,
    EigenFailure,
    MissingArea,
    MvfhError,
    NonPositiveDefiniteD,
    NumericError,
    ParseError,
    RankDeficientX,
    SingularInformation,
    ValidationError,
)
from .model import AreaRecord, Dataset, ModelParams, marginal_covariance, validate_dataset
from .msem import MsemReport, g1, g2, g3, g4, msem_estimate, msem_estimate_all, msem_second_order
from .prediction import (
    GlsFit,
    Prediction,
    beta_inference,
    blup,
    eblup,
    eblup_all,
    gls_beta,
    univariate_eblup,
    univariate_eblup_all,
)
from .simulation import (
    PrialReport,
    RelativeBiasReport,
    SimulationDesign,
    SimulationResult,
    generate_replication,
    msem_estimator_bias,
    prial,
    psi_matrix,
    run_design,
    simulate_msem,
)

__version__ = "0.1.0"

__all__ = [
    "AreaRecord",
    "CovarianceEstimate",
    "Dataset",
    "DimensionMismatch",
    "EigenFailure",
    "GlsFit",
    "MissingArea",
    "ModelParams",
    "MsemReport",
    "MvfhError",
    "NonPositiveDefiniteD",
    "NumericError",
    "ParseError",
    "Prediction",
    "PrialReport",
    "RankDeficientX",
    "RelativeBiasReport",
    "SimulationDesign",
    "SimulationResult",
    "SingularInformation",
    "ValidationError",
    "beta_inference",
    "blup",
    "eblup",
    "eblup_all",
    "estimate_covariance",
    "g1",
    "g2",
    "g3",
    "g4",
    "generate_replication",
    "gls_beta",
    "load_dataset",
    "marginal_covariance",
    "msem_estimate",
    "msem_estimate_all",
    "msem_estimator_bias",
    "msem_second_order",
    "ols_beta",
    "prial",
    "psd_project",
    "psi0_bias",
    "psi_matrix",
    "psi_pr0",
    "psi_pr1",
    "run_design",
    "simulate_msem",
    "univariate_eblup",
    "univariate_eblup_all",
    "univariate_psi",
    "validate_dataset",
    "write_dataset",
]
