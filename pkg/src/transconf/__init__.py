"""Exact law and confidence envelopes for transductive split-conformal p-values."""

from .bounds import DkwParams, Envelope, b_dkw, b_dkw_full, lambda_dkw, lambda_dkw_full, lambda_numerical
from .novelty import bh_threshold, fdp_bound_dkw, fdp_bound_simes, m0_hat_dkw, m0_hat_simes
from .polya import Histogram, PolyaLaw, PseudoScoreVector, ecdf_count_pmf, joint_pmf, sample_representation, sample_urn
from .prediction import build_band, calibrate_level, fcp, fcp_bound_dkw, fcp_bound_simes
from .scores import PValueSet, ScoreSet, break_ties, conformal_pvalues, ecdf, sup_deviation
from .templates import beta_template, calibrate_template, linear_template

__version__ = "0.1.0"

__all__ = [
    "DkwParams", "Envelope", "Histogram", "PValueSet", "PolyaLaw", "PseudoScoreVector", "ScoreSet",
    "b_dkw", "b_dkw_full", "beta_template", "bh_threshold", "break_ties", "build_band",
    "calibrate_level", "calibrate_template", "conformal_pvalues", "ecdf", "ecdf_count_pmf", "fcp",
    "fcp_bound_dkw", "fcp_bound_simes", "fdp_bound_dkw", "fdp_bound_simes", "joint_pmf",
    "lambda_dkw", "lambda_dkw_full", "lambda_numerical", "linear_template", "m0_hat_dkw",
    "m0_hat_simes", "sample_representation", "sample_urn", "sup_deviation",
]
