"""The competition metric.

The loss is ``MSE_HR / F_2``: a squared error taken over the truly high-risk
events only, inflated by the F-beta score (beta = 2) of the high/low
classification over all events. Predictions are usually clipped first so
that low-risk predictions sit just below the threshold.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Union

import numpy as np

from .cdm import HIGH_RISK_THRESHOLD, classify, final_risk
from .exceptions import IdMismatch, NoHighRiskEvents, NonFinite, ZeroF2

DEFAULT_CLIP_EPSILON = 0.001
DEFAULT_BETA = 2.0

__all__ = [
    "ConfusionCounts",
    "PredictionSet",
    "ScoreReport",
    "classify",
    "clip_predictions",
    "competition_loss",
    "confusion",
    "f_beta",
    "mse_hr",
]


@dataclass(frozen=True)
class PredictionSet:
    """Predicted log10 risk per event id."""

    values: Mapping[str, float]
    clip_epsilon: float = DEFAULT_CLIP_EPSILON
    clipped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", dict(self.values))

    @classmethod
    def from_arrays(cls, event_ids, predictions, **kwargs) -> "PredictionSet":
        event_ids = list(event_ids)
        predictions = np.asarray(predictions, dtype=float)
        if len(event_ids) != len(predictions):
            raise IdMismatch("one prediction per event id is required")
        if len(set(event_ids)) != len(event_ids):
            raise IdMismatch("duplicate event ids in prediction set")
        return cls(dict(zip(event_ids, predictions.tolist())), **kwargs)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, event_id):
        return self.values[event_id]

    def subset(self, event_ids) -> "PredictionSet":
        return PredictionSet(
            {i: self.values[i] for i in event_ids}, clip_epsilon=self.clip_epsilon, clipped=self.clipped
        )


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall(self) -> float:
        denom = self.tp + self.fn
        return self.tp / denom if denom else 0.0


@dataclass(frozen=True)
class ScoreReport:
    counts: ConfusionCounts
    precision: float
    recall: float
    f_beta: float
    mse_hr: float
    loss: Optional[float]
    n_high: int
    clipped: bool
    beta: float = DEFAULT_BETA

    @property
    def inv_f_beta(self) -> float:
        return 1.0 / self.f_beta if self.f_beta > 0 else math.inf

    def metric(self, name: str) -> float:
        """Lower-is-better metric by name: ``mse_hr``, ``inv_f2`` or ``loss``."""
        if name == "mse_hr":
            return self.mse_hr
        if name in ("inv_f2", "inv_f_beta"):
            return self.inv_f_beta
        if name == "loss":
            return math.inf if self.loss is None else self.loss
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["f2" if self.beta == 2 else "f_beta"] = out.pop("f_beta")
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScoreReport":
        data = dict(data)
        data["counts"] = ConfusionCounts(**data["counts"])
        if "f2" in data:
            data["f_beta"] = data.pop("f2")
        return cls(**data)


def _as_mapping(preds: Union[PredictionSet, Mapping[str, float]]) -> Mapping[str, float]:
    return preds.values if isinstance(preds, PredictionSet) else preds


def _aligned(truth: Mapping[str, float], preds) -> tuple[np.ndarray, np.ndarray]:
    preds = _as_mapping(preds)
    if truth.keys() != preds.keys():
        missing = len(truth.keys() - preds.keys())
        extra = len(preds.keys() - truth.keys())
        raise IdMismatch(f"{missing} truth ids without prediction, {extra} predictions without truth")
    ids = list(truth)
    r = np.fromiter((truth[i] for i in ids), dtype=float, count=len(ids))
    r_hat = np.fromiter((preds[i] for i in ids), dtype=float, count=len(ids))
    if not (np.isfinite(r).all() and np.isfinite(r_hat).all()):
        raise NonFinite("truth and predictions must be finite")
    return r, r_hat


def _counts(r: np.ndarray, r_hat: np.ndarray) -> ConfusionCounts:
    actual = r >= HIGH_RISK_THRESHOLD
    predicted = r_hat >= HIGH_RISK_THRESHOLD
    tp = int(np.count_nonzero(actual & predicted))
    fp = int(np.count_nonzero(~actual & predicted))
    fn = int(np.count_nonzero(actual & ~predicted))
    return ConfusionCounts(tp=tp, fp=fp, tn=len(r) - tp - fp - fn, fn=fn)


def confusion(truth: Mapping[str, float], preds) -> ConfusionCounts:
    """Confusion counts with High as the positive class."""
    return _counts(*_aligned(truth, preds))


def f_beta(counts: ConfusionCounts, beta: float = DEFAULT_BETA) -> float:
    """F-beta score; 0 by convention when there are no true positives."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if counts.tp == 0:
        return 0.0
    p, q = counts.precision, counts.recall
    b2 = beta * beta
    return (1 + b2) * p * q / (b2 * p + q)


def _mse_hr(r: np.ndarray, r_hat: np.ndarray) -> tuple[float, int]:
    high = r >= HIGH_RISK_THRESHOLD
    n_high = int(np.count_nonzero(high))
    if n_high == 0:
        raise NoHighRiskEvents("MSE_HR needs at least one truly high-risk event")
    err = r[high] - r_hat[high]
    return float(np.dot(err, err) / n_high), n_high


def mse_hr(truth: Mapping[str, float], preds) -> float:
    """Mean squared log-risk error over the truly high-risk events."""
    return _mse_hr(*_aligned(truth, preds))[0]


def clip_predictions(preds, epsilon: float = DEFAULT_CLIP_EPSILON) -> PredictionSet:
    """Raise every low-risk prediction to at least ``-6 - epsilon``.

    Predictions at or above the threshold are untouched, so no prediction
    changes class and F-beta is unaffected.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    floor = HIGH_RISK_THRESHOLD - epsilon
    values = _as_mapping(preds)
    if not all(math.isfinite(v) for v in values.values()):
        raise NonFinite("predictions must be finite")
    return PredictionSet(
        {i: (v if v >= floor else floor) for i, v in values.items()}, clip_epsilon=epsilon, clipped=True
    )


def competition_loss(
    truth: Mapping[str, float],
    preds,
    clip: bool = True,
    beta: float = DEFAULT_BETA,
    epsilon: Optional[float] = None,
    strict: bool = False,
) -> ScoreReport:
    """Score a prediction set against the final risks.

    ``loss`` is ``None`` when F-beta is zero; pass ``strict=True`` to raise
    :class:`ZeroF2` instead.

    Raises:
        NoHighRiskEvents: no truly high-risk event to compute MSE_HR on.
        IdMismatch: truth and predictions cover different events.
    """
    if clip:
        if epsilon is None:
            epsilon = preds.clip_epsilon if isinstance(preds, PredictionSet) else DEFAULT_CLIP_EPSILON
        preds = clip_predictions(preds, epsilon)
    r, r_hat = _aligned(truth, preds)
    counts = _counts(r, r_hat)
    fb = f_beta(counts, beta)
    mse, n_high = _mse_hr(r, r_hat)
    if fb == 0 and strict:
        raise ZeroF2("loss undefined: F-beta is zero")
    return ScoreReport(
        counts=counts,
        precision=counts.precision,
        recall=counts.recall,
        f_beta=fb,
        mse_hr=mse,
        loss=mse / fb if fb > 0 else None,
        n_high=n_high,
        clipped=bool(clip),
        beta=beta,
    )


def truth_from_events(events) -> dict[str, float]:
    """Final risk per event id."""
    return {e.event_id: final_risk(e) for e in events}
