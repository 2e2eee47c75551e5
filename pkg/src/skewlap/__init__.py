"""Laplace and skew-corrected Laplace approximations with computable error diagnostics."""

from .diagnostics import (
    DiagnosticsReport,
    assemble_report,
    check_growth_condition,
    eps_bar3,
    ltv_mc,
    select_radius,
    weighted_opnorm,
)
from .laplace import LaplaceFit, find_mode, fit_laplace, sample_gaussian, whitened_third
from .model import (
    DomainError,
    NotPositiveDefinite,
    PosteriorModel,
    QuadraticModel,
    SkewLapError,
    UnsupportedError,
    UnsupportedRepresentation,
    check_derivatives,
)
from .skew import (
    SkewCorrection,
    build_skew,
    corrected_covariance,
    corrected_integral_mc,
    corrected_mean,
    corrected_mgf_ratio,
    eval_skew,
)

__version__ = "0.1.0"

__all__ = [
    "DiagnosticsReport",
    "DomainError",
    "LaplaceFit",
    "NotPositiveDefinite",
    "PosteriorModel",
    "QuadraticModel",
    "SkewCorrection",
    "SkewLapError",
    "UnsupportedError",
    "UnsupportedRepresentation",
    "assemble_report",
    "build_skew",
    "check_derivatives",
    "check_growth_condition",
    "corrected_covariance",
    "corrected_integral_mc",
    "corrected_mean",
    "corrected_mgf_ratio",
    "eps_bar3",
    "eval_skew",
    "find_mode",
    "fit_laplace",
    "ltv_mc",
    "sample_gaussian",
    "select_radius",
    "weighted_opnorm",
    "whitened_third",
]
