"""Collision-risk forecasting toolkit for conjunction data messages.

Ingest CDM time series, build competition-style data splits, score
predictions with the competition metric, run baseline and rule-based
predictors, and study how well train-set performance carries over to the
test set.
"""

from .cdm import (
    Cdm,
    Event,
    RiskClass,
    classify,
    derived_series_features,
    final_risk,
    latest_known_risk,
)
from .scoring import (
    ConfusionCounts,
    PredictionSet,
    ScoreReport,
    clip_predictions,
    competition_loss,
    confusion,
    f_beta,
    mse_hr,
)

__version__ = "0.1.0"

__all__ = [
    "Cdm",
    "ConfusionCounts",
    "Event",
    "PredictionSet",
    "RiskClass",
    "ScoreReport",
    "classify",
    "clip_predictions",
    "competition_loss",
    "confusion",
    "derived_series_features",
    "f_beta",
    "final_risk",
    "latest_known_risk",
    "mse_hr",
]
