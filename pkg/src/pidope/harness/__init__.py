"""Semi-synthetic experiment machinery: generators, fitters and studies."""
from .fitters import FittedModel, fit_knn, fit_logistic, fit_mu, fit_ridge
from .multiclass import (
    ConvertedData,
    LogisticLabelSource,
    ResampleSource,
    convert_multiclass,
    fit_policy,
    make_yeast_like,
    threshold_policy,
    two_class_source,
)
from .studies import (
    ArticleClickModel,
    CoverageReport,
    PolicyStudyResult,
    RateStudyResult,
    pilot_max_ratio,
    rate_study,
    simulate_coverage,
    threshold_policy_study,
)
from .synthetic import MeanFunction, PolicySpec, QuadratureError, SyntheticSpec

__all__ = [
    "ArticleClickModel",
    "ConvertedData",
    "CoverageReport",
    "FittedModel",
    "LogisticLabelSource",
    "MeanFunction",
    "PolicySpec",
    "PolicyStudyResult",
    "QuadratureError",
    "RateStudyResult",
    "ResampleSource",
    "SyntheticSpec",
    "convert_multiclass",
    "fit_knn",
    "fit_logistic",
    "fit_mu",
    "fit_policy",
    "fit_ridge",
    "make_yeast_like",
    "pilot_max_ratio",
    "rate_study",
    "simulate_coverage",
    "threshold_policy",
    "threshold_policy_study",
    "two_class_source",
]
