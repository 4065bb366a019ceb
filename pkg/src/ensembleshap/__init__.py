"""Faithful, certifiably robust feature attribution for random-subspace ensembles."""

__version__ = "0.1.0"

from .attribution import AttributionResult, attribute_exact, attribute_mc, attribute_run, top_e, unnormalized_scores
from .bounds import BoundSet, beta_quantile, bound_set, clopper_pearson, exact_bound_set
from .certify import CertificationInput, CertificationResult, certified_detection_size, detection_rate_curve
from .core import (
    AblationRule,
    BaseModel,
    ClassificationError,
    ConfigurationError,
    EnumerationTooLargeError,
    FeatureGroup,
    InvalidGroupError,
    PredictionCache,
    Sample,
    TokenSequence,
    ablate,
    read_dataset,
)
from .ensemble import EnsembleConfig, EnsembleRun, enumerate_groups, run_ensemble, sample_groups
from .shapley import BaselineValueFunction, SubsetValueFunction, shapley_exact, shapley_permutation_estimate

__all__ = [
    "AblationRule", "AttributionResult", "BaseModel", "BaselineValueFunction", "BoundSet",
    "CertificationInput", "CertificationResult", "ClassificationError", "ConfigurationError",
    "EnsembleConfig", "EnsembleRun", "EnumerationTooLargeError", "FeatureGroup", "InvalidGroupError",
    "PredictionCache", "Sample", "SubsetValueFunction", "TokenSequence", "ablate", "attribute_exact",
    "attribute_mc", "attribute_run", "beta_quantile", "bound_set", "certified_detection_size",
    "clopper_pearson", "detection_rate_curve", "enumerate_groups", "exact_bound_set", "read_dataset",
    "run_ensemble", "sample_groups", "shapley_exact", "shapley_permutation_estimate", "top_e",
    "unnormalized_scores",
]
