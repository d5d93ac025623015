"""Contextual explanation networks: encoders that generate the parameters of
simple, interpretable predictors, plus the tooling to train, diagnose and
compare them against post-hoc local surrogates."""

from cen.errors import (
    CenError,
    DivergedTrainingError,
    IngestionError,
    InvalidInputError,
    SingularFitError,
    UndefinedMetricError,
    UnimplementedFeatureError,
)

__version__ = "0.1.0"

__all__ = [
    "CenError",
    "DivergedTrainingError",
    "IngestionError",
    "InvalidInputError",
    "SingularFitError",
    "UndefinedMetricError",
    "UnimplementedFeatureError",
    "__version__",
]
