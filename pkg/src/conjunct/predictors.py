"""Risk predictors with a scikit-learn style interface.

Every predictor takes a sequence of :class:`~conjunct.cdm.Event` as ``X``.
``fit`` learns from the full time series of training events, ``predict``
returns one log10 risk per event and only looks at CDMs issued at least
``cutoff`` days before TCA, so cropped and uncropped test events give the
same answer.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.tree import DecisionTreeClassifier
from sklearn.utils.validation import check_is_fitted

from .cdm import (
    CATEGORICAL_FIELDS,
    DEFAULT_CUTOFF,
    HIGH_RISK_THRESHOLD,
    Event,
    derived_series_features,
    final_risk,
    latest_cdm,
    latest_known_risk,
)
from .exceptions import EmptyTrainSet, MissingFeature
from .scoring import PredictionSet

LRP_LOW_VALUE = -6.001
CRP_VALUE = -5.0
MAGPIES_ANOMALOUS_VALUE = -5.35

LATEST_CDM_FEATURES = (
    "time_to_tca",
    "max_risk_estimate",
    "max_risk_scaling",
    "mahalanobis_distance",
    "miss_distance",
    "c_position_covariance_det",
    "c_obs_used",
)
SERIES_FEATURES = ("number_CDMs", "mean_risk_CDMs", "std_risk_CDMs")
MAGPIES_FEATURES = LATEST_CDM_FEATURES + SERIES_FEATURES
DEFAULT_DELTA_FEATURES = ("risk",) + LATEST_CDM_FEATURES


def event_features(events: Sequence[Event], names: Sequence[str], cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """Numeric feature matrix, one row per event, NaN where missing.

    Plain names are read from the latest CDM before the cutoff; the series
    names (``number_CDMs`` and friends) are computed over all such CDMs.
    """
    for name in names:
        if name in CATEGORICAL_FIELDS:
            raise ValueError(f"{name!r} is categorical and cannot be used as a numeric feature")
    needs_series = any(n in SERIES_FEATURES for n in names)
    out = np.full((len(events), len(names)), np.nan)
    for i, event in enumerate(events):
        cdm = latest_cdm(event, cutoff)
        series = derived_series_features(event, cutoff) if needs_series else {}
        for j, name in enumerate(names):
            value = series[name] if name in SERIES_FEATURES else cdm.get(name)
            if value is not None:
                out[i, j] = value
    return out


def magpies_features(event: Event, cutoff: float = DEFAULT_CUTOFF) -> np.ndarray:
    """The ten-entry anomaly feature vector of one event (NaN marks missing)."""
    return event_features([event], MAGPIES_FEATURES, cutoff)[0]


def delta_target(event: Event, cutoff: float = DEFAULT_CUTOFF) -> float:
    """Change between the latest known risk and the final risk."""
    return final_risk(event) - latest_known_risk(event, cutoff)


def _latest_risks(events, cutoff) -> np.ndarray:
    return np.array([latest_known_risk(e, cutoff) for e in events], dtype=float)


class RiskPredictor(BaseEstimator):
    """Base class: stateless by default, ``fit`` just returns ``self``."""

    def fit(self, X, y=None):
        return self

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict_set(self, X) -> PredictionSet:
        X = list(X)
        return PredictionSet.from_arrays([e.event_id for e in X], self.predict(X))


class CRPPredictor(RiskPredictor):
    """Constant risk prediction."""

    def __init__(self, value=CRP_VALUE):
        self.value = value

    def predict(self, X):
        return np.full(len(X), float(self.value))


class LRPPredictor(RiskPredictor):
    """Latest risk prediction: the naive forecast, floored just below -6."""

    def __init__(self, cutoff=DEFAULT_CUTOFF, low_value=LRP_LOW_VALUE):
        self.cutoff = cutoff
        self.low_value = low_value

    def predict(self, X):
        r2 = _latest_risks(X, self.cutoff)
        return np.where(r2 >= HIGH_RISK_THRESHOLD, r2, self.low_value)


def crp_predict(events) -> PredictionSet:
    return CRPPredictor().predict_set(events)


def lrp_predict(events, cutoff: float = DEFAULT_CUTOFF) -> PredictionSet:
    return LRPPredictor(cutoff=cutoff).predict_set(events)


# -- threshold cascade ----------------------------------------------------------


@dataclass(frozen=True)
class CascadeConfig:
    """Parameters of the threshold cascade; mirrored field-for-field by cascade.json.

    Steps 0-2 promote borderline low risks, steps 3-5 force events to
    ``safe_value`` when the chaser is a payload, the target is small, or the
    miss distance is large, and step 6 clamps high risks.
    """

    step0_threshold: float = -6.04
    step0_value: float = -5.95
    step1_threshold: float = -6.40
    step1_value: float = -5.60
    step2_threshold: float = -7.30
    step2_value: float = -5.00
    safe_value: float = -6.00001
    payload_type: str = "PAYLOAD"
    t_span_cutoff: float = 0.5
    miss_distance_cutoff: float = 30000.0
    high_clip_lower: float = -4.00
    high_clip_upper: float = -3.50
    enabled_steps: tuple = (0, 1, 2, 3, 4, 5, 6)

    def __post_init__(self):
        object.__setattr__(self, "enabled_steps", tuple(sorted(set(self.enabled_steps))))
        thresholds = (HIGH_RISK_THRESHOLD, self.step0_threshold, self.step1_threshold, self.step2_threshold)
        if not all(a > b for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError(f"promotion thresholds must strictly decrease from -6: {thresholds}")
        if not self.high_clip_lower < self.high_clip_upper:
            raise ValueError("high_clip_lower must be below high_clip_upper")
        unknown = set(self.enabled_steps) - set(range(7))
        if unknown:
            raise ValueError(f"unknown cascade steps {sorted(unknown)}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["enabled_steps"] = list(self.enabled_steps)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "CascadeConfig":
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "CascadeConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


_SAFE_STEPS = {3: "c_object_type", 4: "t_span", 5: "miss_distance"}


def _cascade_value(event: Event, config: CascadeConfig, cutoff: float) -> float:
    steps = config.enabled_steps
    cdm = latest_cdm(event, cutoff)
    r2 = latest_known_risk(event, cutoff)
    if r2 < HIGH_RISK_THRESHOLD:
        safe = False
        for step, name in _SAFE_STEPS.items():
            if step not in steps:
                continue
            value = cdm.get(name)
            if value is None:
                raise MissingFeature(event.event_id, step, name)
            if step == 3:
                safe |= str(value).strip().upper() == config.payload_type.upper()
            elif step == 4:
                safe |= value < config.t_span_cutoff
            else:
                safe |= value > config.miss_distance_cutoff
        if safe:
            return config.safe_value
        if 0 in steps and config.step0_threshold <= r2:
            return config.step0_value
        if 1 in steps and config.step1_threshold <= r2 < config.step0_threshold:
            return config.step1_value
        if 2 in steps and config.step2_threshold <= r2 < config.step1_threshold:
            return config.step2_value
        return config.safe_value
    if 6 in steps:
        if r2 >= config.high_clip_upper:
            return config.high_clip_upper
        if r2 >= config.high_clip_lower:
            return config.high_clip_lower
    return r2


class SescCascadePredictor(RiskPredictor):
    """Hand-tuned cascade of thresholds on the latest known risk.

    Safe overrides (steps 3-5) only apply to events whose latest risk is
    below -6, and win over the promotions of steps 0-2. ``overrides`` maps
    event ids to fixed outputs, applied last.
    """

    def __init__(self, config: Optional[CascadeConfig] = None, overrides: Optional[Mapping] = None,
                 cutoff=DEFAULT_CUTOFF):
        self.config = config
        self.overrides = overrides
        self.cutoff = cutoff

    def predict(self, X):
        config = self.config if self.config is not None else CascadeConfig()
        overrides = self.overrides or {}
        out = np.empty(len(X))
        for i, event in enumerate(X):
            if event.event_id in overrides:
                out[i] = overrides[event.event_id]
            else:
                out[i] = _cascade_value(event, config, self.cutoff)
        return out


def sesc_cascade_predict(events, config: Optional[CascadeConfig] = None, overrides=None) -> PredictionSet:
    return SescCascadePredictor(config=config, overrides=overrides).predict_set(events)


# -- anomaly rule -------------------------------------------------------------


class ConstantAnomalyClassifier(ClassifierMixin, BaseEstimator):
    """Answers the same label for every feature vector."""

    def __init__(self, anomalous=False):
        self.anomalous = anomalous

    def fit(self, X, y=None):
        self.classes_ = np.array([False, True])
        return self

    def predict(self, X):
        return np.full(len(X), bool(self.anomalous))


class MajorityVoteClassifier(ClassifierMixin, BaseEstimator):
    """Majority vote of bootstrapped shallow trees.

    Trees split on NaN natively, so missing features need no imputation.
    """

    def __init__(self, n_members=5, max_depth=3, random_state=0):
        self.n_members = n_members
        self.max_depth = max_depth
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=bool)
        rng = np.random.default_rng(self.random_state)
        self.classes_ = np.array([False, True])
        self.members_ = []
        for _ in range(self.n_members):
            idx = rng.integers(len(X), size=len(X))
            if len(np.unique(y[idx])) < 2:
                member = ConstantAnomalyClassifier(bool(y[idx][0])).fit(X)
            else:
                member = DecisionTreeClassifier(
                    max_depth=self.max_depth, class_weight="balanced",
                    random_state=int(rng.integers(2**31)),
                ).fit(X[idx], y[idx])
            self.members_.append(member)
        return self

    def predict(self, X):
        check_is_fitted(self, "members_")
        votes = np.sum([np.asarray(m.predict(X), dtype=bool) for m in self.members_], axis=0)
        return votes * 2 > len(self.members_)


def _magpies_values(events, classifier, anomalous_value, cutoff) -> np.ndarray:
    r2 = _latest_risks(events, cutoff)
    out = r2.copy()
    low = np.flatnonzero(r2 < HIGH_RISK_THRESHOLD)
    if len(low):
        features = event_features([events[i] for i in low], MAGPIES_FEATURES, cutoff)
        anomalous = np.asarray(classifier.predict(features), dtype=bool)
        out[low] = np.where(anomalous, anomalous_value, LRP_LOW_VALUE)
    return out


def magpies_rule_predict(events, classifier, anomalous_value: float = MAGPIES_ANOMALOUS_VALUE,
                         cutoff: float = DEFAULT_CUTOFF) -> PredictionSet:
    """Naive forecast for high risks; low risks go to ``anomalous_value`` when
    a fitted classifier flags them, else just below the threshold."""
    events = list(events)
    values = _magpies_values(events, classifier, anomalous_value, cutoff)
    return PredictionSet.from_arrays([e.event_id for e in events], values)


class MagpiesRulePredictor(RiskPredictor):
    """Anomaly-gated naive forecast.

    ``fit`` trains a clone of ``classifier`` to spot low latest risks that
    end up high, and (with ``fit_anomalous_value``) replaces the anomalous
    output with the mean final risk of the high-risk training events.
    """

    def __init__(self, classifier=None, anomalous_value=MAGPIES_ANOMALOUS_VALUE, fit_anomalous_value=True,
                 cutoff=DEFAULT_CUTOFF):
        self.classifier = classifier
        self.anomalous_value = anomalous_value
        self.fit_anomalous_value = fit_anomalous_value
        self.cutoff = cutoff

    def fit(self, X, y=None):
        X = list(X)
        r = np.array([final_risk(e) for e in X], dtype=float)
        r2 = _latest_risks(X, self.cutoff)
        low = np.flatnonzero(r2 < HIGH_RISK_THRESHOLD)
        labels = r[low] >= HIGH_RISK_THRESHOLD
        base = self.classifier if self.classifier is not None else MajorityVoteClassifier()
        if len(np.unique(labels)) < 2:
            self.classifier_ = ConstantAnomalyClassifier(bool(labels[0]) if len(labels) else False).fit(None)
        else:
            features = event_features([X[i] for i in low], MAGPIES_FEATURES, self.cutoff)
            self.classifier_ = clone(base).fit(features, labels)
        high = r >= HIGH_RISK_THRESHOLD
        if self.fit_anomalous_value and high.any():
            self.anomalous_value_ = float(r[high].mean())
        else:
            self.anomalous_value_ = float(self.anomalous_value)
        return self

    def predict(self, X):
        check_is_fitted(self, "classifier_")
        return _magpies_values(list(X), self.classifier_, self.anomalous_value_, self.cutoff)


# -- delta-risk regression -------------------------------------------------------


class EmpiricalQuantileTransformer(TransformerMixin, BaseEstimator):
    """Maps values to their empirical CDF position in [0, 1].

    Sorted training values sit at evenly spaced positions ``i / (n - 1)``;
    repeated values share the mean of their positions. Between training
    values the map is linear, and ``inverse_transform`` is its pseudo-inverse.
    """

    def fit(self, X, y=None):
        values = np.sort(np.asarray(X, dtype=float).ravel())
        if len(values) < 2 or not np.isfinite(values).all():
            raise EmptyTrainSet("need at least two finite training values")
        positions = np.linspace(0.0, 1.0, len(values))
        self.references_, inverse = np.unique(values, return_inverse=True)
        self.quantiles_ = np.bincount(inverse, weights=positions) / np.bincount(inverse)
        return self

    def transform(self, X):
        check_is_fitted(self, "references_")
        return np.interp(np.asarray(X, dtype=float), self.references_, self.quantiles_)

    def inverse_transform(self, X):
        check_is_fitted(self, "references_")
        return np.interp(np.asarray(X, dtype=float), self.quantiles_, self.references_)


class DeltaRiskPredictor(RiskPredictor):
    """Learns the change from the latest known risk to the final risk.

    Any regressor with ``fit``/``predict`` works; it sees the raw feature
    matrix (NaN for missing values) and, with ``quantile_target``, a
    uniformly re-encoded target. Predictions are ``r_-2 + h_hat``.
    """

    def __init__(self, regressor=None, features=DEFAULT_DELTA_FEATURES, cutoff=DEFAULT_CUTOFF,
                 quantile_target=True):
        self.regressor = regressor
        self.features = features
        self.cutoff = cutoff
        self.quantile_target = quantile_target

    def fit(self, X, y=None):
        X = list(X)
        if not X:
            raise EmptyTrainSet("no training events")
        h = np.array([delta_target(e, self.cutoff) for e in X])
        if self.quantile_target:
            self.target_transform_ = EmpiricalQuantileTransformer().fit(h)
            h = self.target_transform_.transform(h)
        else:
            self.target_transform_ = None
        base = self.regressor if self.regressor is not None else KNearestMeanRegressor()
        self.regressor_ = clone(base).fit(event_features(X, self.features, self.cutoff), h)
        return self

    def predict(self, X):
        check_is_fitted(self, "regressor_")
        X = list(X)
        h = np.asarray(self.regressor_.predict(event_features(X, self.features, self.cutoff)), dtype=float)
        if self.target_transform_ is not None:
            h = self.target_transform_.inverse_transform(h)
        return _latest_risks(X, self.cutoff) + h


class KNearestMeanRegressor(BaseEstimator):
    """Mean target of the ``k`` nearest training rows (Euclidean).

    Columns are standardized with training mean and std; missing entries
    become 0 after standardization, i.e. the training mean.
    """

    def __init__(self, k=15, chunk_size=512):
        self.k = k
        self.chunk_size = chunk_size

    def _standardize(self, X):
        Z = (np.asarray(X, dtype=float) - self.mean_) / self.scale_
        return np.nan_to_num(Z, nan=0.0)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        if len(X) == 0:
            raise EmptyTrainSet("no training rows")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        with warnings.catch_warnings():
            # all-missing columns: mean and std come out NaN and are replaced below
            warnings.simplefilter("ignore", RuntimeWarning)
            mean = np.nanmean(X, axis=0)
            scale = np.nanstd(X, axis=0)
        self.mean_ = np.nan_to_num(mean)
        self.scale_ = np.where(np.isfinite(scale) & (scale > 0), scale, 1.0)
        self.train_ = self._standardize(X)
        self.y_ = np.asarray(y, dtype=float)
        return self

    def predict(self, X):
        check_is_fitted(self, "train_")
        Z = self._standardize(X)
        k = min(self.k, len(self.train_))
        train_sq = np.einsum("ij,ij->i", self.train_, self.train_)
        out = np.empty(len(Z))
        for start in range(0, len(Z), self.chunk_size):
            block = Z[start:start + self.chunk_size]
            d2 = train_sq[None, :] - 2.0 * block @ self.train_.T + np.einsum("ij,ij->i", block, block)[:, None]
            if k < len(self.train_):
                idx = np.argpartition(d2, k - 1, axis=1)[:, :k]
            else:
                idx = np.broadcast_to(np.arange(len(self.train_)), d2.shape)
            out[start:start + len(block)] = self.y_[idx].mean(axis=1)
        return out


class KNNDeltaRegressor(DeltaRiskPredictor):
    """:class:`DeltaRiskPredictor` backed by a k-nearest-neighbour mean."""

    def __init__(self, k=15, features=DEFAULT_DELTA_FEATURES, cutoff=DEFAULT_CUTOFF, quantile_target=True):
        self.k = k
        self.features = features
        self.cutoff = cutoff
        self.quantile_target = quantile_target

    @property
    def regressor(self):
        return KNearestMeanRegressor(k=self.k)


PREDICTORS = {
    "crp": CRPPredictor,
    "lrp": LRPPredictor,
    "sesc": SescCascadePredictor,
    "magpies": MagpiesRulePredictor,
    "knn": KNNDeltaRegressor,
}


def make_predictor(name: str, **params) -> RiskPredictor:
    try:
        cls = PREDICTORS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(PREDICTORS)}") from None
    return cls(**params)
