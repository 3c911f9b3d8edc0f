"""Functional mixture discriminant analysis with hidden logistic process regression."""

from fmda.basis import BasisSpec, build_design, logistic_covariates
from fmda.curves import (
    LabeledCurveSet,
    SubclassSpec,
    SyntheticSpec,
    TimeGrid,
    default_synthetic_spec,
    generate_synthetic,
    load_csv,
    save_csv,
    split_kfold,
)
from fmda.discriminant import METHOD_TAGS, Classifier, MethodSpec, predict, predict_proba, train
from fmda.errors import FmdaError, ParseError, ShapeMismatchError, SingularSystemError, ValidationError
from fmda.evaluation import CvResult, benchmark_table, cross_validate, misclassification_rate
from fmda.mixrhlp import FitConfig, MixRhlpParams, ModelShape, Posteriors, em_fit

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "Classifier",
    "CvResult",
    "FitConfig",
    "FmdaError",
    "LabeledCurveSet",
    "METHOD_TAGS",
    "MethodSpec",
    "MixRhlpParams",
    "ModelShape",
    "ParseError",
    "Posteriors",
    "ShapeMismatchError",
    "SingularSystemError",
    "SubclassSpec",
    "SyntheticSpec",
    "TimeGrid",
    "ValidationError",
    "benchmark_table",
    "build_design",
    "cross_validate",
    "default_synthetic_spec",
    "em_fit",
    "generate_synthetic",
    "load_csv",
    "logistic_covariates",
    "misclassification_rate",
    "predict",
    "predict_proba",
    "save_csv",
    "split_kfold",
    "train",
]
