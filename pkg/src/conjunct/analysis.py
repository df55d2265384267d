"""Statistics for the generalization study and the dataset diagnostics.

Covers rank correlation, the paired t-test, Monte-Carlo simulation of many
competitions with different data splits, aggregation of their results,
feature-relevance aggregation, a tail-weighted Weibull fit, PCA and risk
histograms.
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, special, stats
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .cdm import Event, final_risk
from .exceptions import (
    AllZeroWeights,
    ConjunctError,
    DegenerateInput,
    LengthMismatch,
    NoConvergence,
    NonPositiveSample,
    RankDeficient,
)
from .predictors import LRPPredictor
from .scoring import ScoreReport, competition_loss
from .splitting import TEST_SIZE_GRID, virtual_competition_split

METRICS = ("mse_hr", "inv_f2", "loss")
REFERENCE = "lrp"


# -- correlation and testing ------------------------------------------------------


def _paired(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"need two 1-d sequences of equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise LengthMismatch("need at least two pairs")
    return x, y


def spearman(x, y) -> float:
    """Spearman rank correlation; ties get average ranks.

    Raises:
        LengthMismatch: lengths differ or fewer than two pairs.
        DegenerateInput: all ``x`` or all ``y`` are equal.
    """
    x, y = _paired(x, y)
    rx = stats.rankdata(x) - (len(x) + 1) / 2
    ry = stats.rankdata(y) - (len(y) + 1) / 2
    sxx, syy = np.dot(rx, rx), np.dot(ry, ry)
    if sxx == 0 or syy == 0:
        raise DegenerateInput("rank correlation undefined for constant input")
    rho = np.dot(rx, ry) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, rho)))


@dataclass(frozen=True)
class TTestResult:
    t: float
    two_sided_p: float
    dof: int


def paired_t_test(a, b) -> TTestResult:
    """Paired Student t-test on ``a - b``.

    The two-sided p-value is ``I_{dof/(dof+t^2)}(dof/2, 1/2)``, the
    regularized incomplete beta function.
    """
    a, b = _paired(a, b)
    d = a - b
    n = len(d)
    sd = np.std(d, ddof=1)
    if sd == 0:
        raise DegenerateInput("differences have zero variance")
    t = float(np.mean(d) / (sd / math.sqrt(n)))
    dof = n - 1
    p = float(special.betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return TTestResult(t=t, two_sided_p=p, dof=dof)


# -- virtual competitions -----------------------------------------------------------


@dataclass
class CompetitionResult:
    index: int
    seed: int
    test_size: float
    n_train: int = 0
    n_test: int = 0
    train: dict = field(default_factory=dict)
    test: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    def report(self, name: str, side: str) -> Optional[ScoreReport]:
        return getattr(self, side).get(name)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "seed": self.seed,
            "test_size": self.test_size,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "train": {k: v.to_dict() for k, v in sorted(self.train.items())},
            "test": {k: v.to_dict() for k, v in sorted(self.test.items())},
            "errors": dict(sorted(self.errors.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CompetitionResult":
        return cls(
            index=data["index"],
            seed=data["seed"],
            test_size=data["test_size"],
            n_train=data.get("n_train", 0),
            n_test=data.get("n_test", 0),
            train={k: ScoreReport.from_dict(v) for k, v in data.get("train", {}).items()},
            test={k: ScoreReport.from_dict(v) for k, v in data.get("test", {}).items()},
            errors=dict(data.get("errors", {})),
        )


def _error_text(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}"


def run_competition(events: Sequence[Event], predictors: Mapping, index: int, seed: int = 0,
                    test_sizes=TEST_SIZE_GRID) -> CompetitionResult:
    """Simulate one competition: split, fit every predictor, score both sides."""
    split = virtual_competition_split(events, index, seed, test_sizes)
    result = CompetitionResult(index=index, seed=split.seed, test_size=split.test_size,
                               n_train=len(split.train), n_test=len(split.test))
    by_id = {e.event_id: e for e in events}
    train = [by_id[i] for i in split.train]
    test = [by_id[i] for i in split.test]
    truth_train = {e.event_id: final_risk(e) for e in train}
    truth_test = {e.event_id: final_risk(e) for e in test}
    models = {REFERENCE: LRPPredictor()}
    models.update(predictors)
    for name, estimator in models.items():
        try:
            model = clone(estimator).fit(train)
            result.train[name] = competition_loss(truth_train, model.predict_set(train))
            result.test[name] = competition_loss(truth_test, model.predict_set(test))
        except ConjunctError as exc:
            result.train.pop(name, None)
            result.test.pop(name, None)
            result.errors[name] = _error_text(exc)
    return result


_WORKER_STATE: dict = {}


def _init_worker(events, predictors, seed, test_sizes):
    _WORKER_STATE.update(events=events, predictors=predictors, seed=seed, test_sizes=test_sizes)


def _run_in_worker(index):
    state = _WORKER_STATE
    return _run_guarded(state["events"], state["predictors"], index, state["seed"], state["test_sizes"])


def _run_guarded(events, predictors, index, seed, test_sizes):
    try:
        return run_competition(events, predictors, index, seed, test_sizes)
    except ConjunctError as exc:
        return CompetitionResult(index=index, seed=seed, test_size=None, errors={"split": _error_text(exc)})


def run_virtual_competitions(
    events: Sequence[Event],
    predictors: Mapping,
    n_competitions: int,
    seed: int = 0,
    test_sizes: Sequence[float] = TEST_SIZE_GRID,
    parallelism: int = 1,
) -> list[CompetitionResult]:
    """Monte-Carlo cross-validation over ``n_competitions`` stratified splits.

    ``predictors`` maps names to unfitted estimators; each is cloned and
    fitted once per split. The LRP baseline is always scored under the name
    ``"lrp"``. Failures are recorded in ``errors`` rather than raised. The
    output depends only on the inputs and ``seed``, not on ``parallelism``.
    """
    if n_competitions < 1:
        raise ValueError("n_competitions must be at least 1")
    events = list(events)
    predictors = dict(predictors)
    indices = range(n_competitions)
    if parallelism <= 1:
        return [_run_guarded(events, predictors, i, seed, test_sizes) for i in indices]
    with ProcessPoolExecutor(
        max_workers=parallelism, initializer=_init_worker, initargs=(events, predictors, seed, tuple(test_sizes))
    ) as pool:
        chunk = max(1, n_competitions // (4 * parallelism))
        return list(pool.map(_run_in_worker, indices, chunksize=chunk))


def results_to_jsonl(results: Iterable[CompetitionResult]) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n" for r in results)


def read_results_jsonl(path) -> list[CompetitionResult]:
    with open(path, encoding="utf-8") as fh:
        return [CompetitionResult.from_dict(json.loads(line)) for line in fh if line.strip()]


def _mean_std(values) -> tuple[float, float]:
    values = [v for v in values if math.isfinite(v)]
    if not values:
        return math.nan, math.nan
    return float(np.mean(values)), float(np.std(values))


def aggregate_competitions(
    results: Iterable[CompetitionResult],
    reference: str = REFERENCE,
    metrics: Sequence[str] = METRICS,
    test_sizes: Optional[Sequence[float]] = None,
) -> list[dict]:
    """Per-test-size summary of simulated competitions.

    For each competition and metric: the Spearman correlation between the
    models' train and test evaluations, and the percentage of models beating
    the reference on both sides. Both are then averaged over competitions.
    The normalized inverse-F2 gain ``100 * (ref - model) / ref`` is averaged
    over every model of every competition in the cell. A test size listed in
    ``test_sizes`` without results gives a row with ``empty=True``.
    """
    cells: dict = {}
    for result in results:
        if reference in result.train and reference in result.test:
            cells.setdefault(result.test_size, []).append(result)
    keys = sorted(set(cells) | set(test_sizes or ()))
    rows = []
    for size in keys:
        comps = cells.get(size, [])
        row = {"test_size": size, "n_competitions": len(comps), "empty": not comps}
        rho = {m: [] for m in metrics}
        beats = {m: [] for m in metrics}
        gains = {"train": [], "test": []}
        n_models = 0
        for comp in comps:
            names = [n for n in comp.train if n != reference and n in comp.test]
            n_models += len(names)
            for m in metrics:
                ref_train = comp.train[reference].metric(m)
                ref_test = comp.test[reference].metric(m)
                tr = [comp.train[n].metric(m) for n in names]
                te = [comp.test[n].metric(m) for n in names]
                if names:
                    beats[m].append(100.0 * np.mean([a < ref_train and b < ref_test for a, b in zip(tr, te)]))
                if len(names) >= 2:
                    try:
                        rho[m].append(spearman(tr, te))
                    except DegenerateInput:
                        pass
            for side in ("train", "test"):
                ref = getattr(comp, side)[reference].metric("inv_f2")
                if not math.isfinite(ref):
                    continue
                for n in names:
                    gains[side].append(100.0 * (ref - getattr(comp, side)[n].metric("inv_f2")) / ref)
        row["n_models"] = n_models
        for m in metrics:
            row[f"spearman_{m}_mean"], row[f"spearman_{m}_std"] = _mean_std(rho[m])
            row[f"outperform_{m}_mean"], row[f"outperform_{m}_std"] = _mean_std(beats[m])
        for side in ("train", "test"):
            row[f"gain_inv_f2_{side}_mean"], row[f"gain_inv_f2_{side}_std"] = _mean_std(gains[side])
        rows.append(row)
    return rows


def fraction_outperforming(results: Iterable[CompetitionResult], model: str, metric: str = "inv_f2",
                           reference: str = REFERENCE) -> float:
    """Share of competitions where ``model`` beats the reference on train and test."""
    wins = total = 0
    for r in results:
        if model in r.train and model in r.test and reference in r.train and reference in r.test:
            total += 1
            wins += (r.train[model].metric(metric) < r.train[reference].metric(metric)
                     and r.test[model].metric(metric) < r.test[reference].metric(metric))
    if total == 0:
        raise DegenerateInput(f"no competition scored both {model!r} and {reference!r}")
    return wins / total


# -- feature relevance ---------------------------------------------------------------


@dataclass(frozen=True)
class RelevanceRecord:
    """Per-model feature gains plus the model's inverse-F2 gain over LRP.

    ``weight`` is the fractional test-set gain; ``train_gain`` the same on
    the training set.
    """

    model_id: str
    gains: Mapping[str, float]
    weight: float
    train_gain: Optional[float] = None

    @property
    def outperforms(self) -> bool:
        return self.weight > 0 and (self.train_gain is None or self.train_gain > 0)

    def percentages(self) -> dict[str, float]:
        total = math.fsum(self.gains.values())
        if total <= 0:
            return {k: 0.0 for k in self.gains}
        return {k: 100.0 * v / total for k, v in self.gains.items()}


def feature_relevance_aggregate(records: Iterable[RelevanceRecord], include_all: bool = False) -> list[dict]:
    """Rank features by weighted mean of per-model relevance percentages.

    By default only models beating LRP on both sets are used, weighted by
    their test-set gain. ``include_all`` uses every model with unit weights.
    The spread is the weighted population standard deviation.
    """
    records = list(records)
    if not records:
        raise ValueError("no relevance records")
    if include_all:
        chosen, weights = records, np.ones(len(records))
    else:
        chosen = [r for r in records if r.outperforms]
        weights = np.array([r.weight for r in chosen], dtype=float)
    if not chosen or weights.sum() <= 0:
        raise AllZeroWeights("no positive weight among the selected relevance records")
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    features = sorted({k for r in chosen for k in r.gains})
    table = np.array([[r.percentages().get(f, 0.0) for f in features] for r in chosen])
    mean = weights @ table / weights.sum()
    std = np.sqrt(weights @ (table - mean) ** 2 / weights.sum())
    order = sorted(range(len(features)), key=lambda j: (-mean[j], features[j]))
    return [
        {"feature": features[j], "rank": rank, "mean": float(mean[j]), "std": float(std[j])}
        for rank, j in enumerate(order, start=1)
    ]


# -- Weibull --------------------------------------------------------------------------


@dataclass(frozen=True)
class WeibullFit:
    shape: float
    scale: float
    tail_weight: float
    n_iter: int = 0

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ValueError("Weibull parameters must be positive")

    def cdf(self, x):
        return -np.expm1(-((np.asarray(x, dtype=float) / self.scale) ** self.shape))


def _tail_weights(x: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 0:
        return np.ones_like(x)
    ecdf = stats.rankdata(x) / (len(x) + 1)
    return (1.0 - ecdf) ** gamma


def weibull_fit(samples, tail_weight_gamma: float = 2.0, rtol: float = 1e-9, max_iter: int = 200) -> WeibullFit:
    """Weighted maximum-likelihood Weibull fit.

    Each sample gets weight ``(1 - F(x))**gamma`` with ``F`` the empirical
    CDF, so a positive ``gamma`` favours the left tail; ``gamma = 0`` is the
    ordinary MLE. The shape solves the profile score equation by Brent's
    method and the scale follows in closed form.

    Raises:
        NonPositiveSample: a sample is not strictly positive.
        NoConvergence: the shape equation has no bracketed root.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) < 10:
        raise ValueError("need at least 10 samples")
    if not (np.isfinite(x).all() and (x > 0).all()):
        raise NonPositiveSample("Weibull samples must be finite and positive")
    if tail_weight_gamma < 0:
        raise ValueError("tail_weight_gamma must be non-negative")
    w = _tail_weights(x, tail_weight_gamma)
    w = w / w.sum()
    log_x = np.log(x)
    centre = float(w @ log_x)
    y = log_x - centre
    if np.ptp(y) == 0:
        raise NoConvergence("all samples are equal; the shape is unbounded")

    def score(k):
        a = k * y
        e = np.exp(a - a.max())
        return float((w * e) @ y / (w @ e)) - 1.0 / k

    lo, hi = 1e-3, 1.0
    while score(lo) > 0:
        lo /= 10
        if lo < 1e-12:
            raise NoConvergence("cannot bracket the shape from below")
    while score(hi) < 0:
        hi *= 4
        if hi > 1e12:
            raise NoConvergence("cannot bracket the shape from above")
    k, info = optimize.brentq(score, lo, hi, rtol=rtol, maxiter=max_iter, full_output=True, disp=False)
    if not info.converged:
        raise NoConvergence(f"shape equation did not converge in {max_iter} iterations")
    a = k * y
    log_mean = a.max() + math.log(float(w @ np.exp(a - a.max())))
    scale = math.exp(centre + log_mean / k)
    return WeibullFit(shape=float(k), scale=scale, tail_weight=tail_weight_gamma, n_iter=info.iterations)


class WeibullFitter(BaseEstimator):
    """Estimator wrapper around :func:`weibull_fit`."""

    def __init__(self, tail_weight_gamma=2.0, rtol=1e-9, max_iter=200):
        self.tail_weight_gamma = tail_weight_gamma
        self.rtol = rtol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        fit = weibull_fit(X, self.tail_weight_gamma, self.rtol, self.max_iter)
        self.shape_, self.scale_, self.n_iter_ = fit.shape, fit.scale, fit.n_iter
        return self

    def cdf(self, X):
        check_is_fitted(self, "shape_")
        return WeibullFit(self.shape_, self.scale_, self.tail_weight_gamma).cdf(X)


# -- PCA ------------------------------------------------------------------------------


class PCA(TransformerMixin, BaseEstimator):
    """Principal components of standardized data with mean-imputed gaps.

    Component signs are fixed so that each component's largest-magnitude
    loading is positive.
    """

    def __init__(self, n_components=2, rank_tol=1e-10):
        self.n_components = n_components
        self.rank_tol = rank_tol

    def _prepare(self, X):
        X = np.asarray(X, dtype=float)
        X = np.where(np.isnan(X), self.mean_, X)
        return (X - self.mean_) / self.scale_

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or len(X) < 2:
            raise ValueError("PCA needs a 2-d matrix with at least two rows")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            mean = np.nanmean(X, axis=0)
        self.mean_ = np.nan_to_num(mean)
        filled = np.where(np.isnan(X), self.mean_, X)
        scale = filled.std(axis=0, ddof=1)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Z = (filled - self.mean_) / self.scale_
        cov = Z.T @ Z / (len(Z) - 1)
        values, vectors = np.linalg.eigh(cov)
        order = np.argsort(values)[::-1]
        values, vectors = np.clip(values[order], 0.0, None), vectors[:, order]
        k = self.n_components
        total = values.sum()
        if k > len(values) or total <= 0 or values[k - 1] <= self.rank_tol * total:
            raise RankDeficient(f"fewer than {k} non-zero eigenvalues")
        components = vectors[:, :k].T
        flip = np.sign(components[np.arange(k), np.abs(components).argmax(axis=1)])
        self.components_ = components * flip[:, None]
        self.explained_variance_ = values[:k]
        self.explained_variance_ratio_ = values[:k] / total
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        return self._prepare(X) @ self.components_.T


@dataclass(frozen=True)
class PCAResult:
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    projections: np.ndarray


def pca(X, k: int = 2) -> PCAResult:
    model = PCA(n_components=k)
    projections = model.fit_transform(X)
    return PCAResult(model.components_, model.explained_variance_ratio_, projections)


# -- histograms ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int


def _risks(values) -> np.ndarray:
    values = list(values)
    if values and isinstance(values[0], Event):
        values = [final_risk(e) for e in values]
    return np.asarray(values, dtype=float)


def risk_histogram(values, bin_width: float = 1.0, range: tuple = (-30.0, 0.0)) -> Histogram:
    """Histogram of final risks (events or plain risk values).

    Bins are half-open ``[a, a + width)`` except the last, which also holds
    the upper edge. Values outside the range are counted as under/overflow.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    lo, hi = range
    n_bins = max(1, math.ceil((hi - lo) / bin_width - 1e-9))
    edges = lo + bin_width * np.arange(n_bins + 1)
    risks = _risks(values)
    under = int(np.count_nonzero(risks < lo))
    over = int(np.count_nonzero(risks > edges[-1]))
    inside = risks[(risks >= lo) & (risks <= edges[-1])]
    idx = np.minimum(np.floor((inside - lo) / bin_width).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return Histogram(edges=edges, counts=counts, underflow=under, overflow=over)


def threshold_counts(values, thresholds: Sequence[float] = (-4.0, -5.0, -6.0)) -> dict[float, int]:
    """Number of final risks at or above each threshold."""
    risks = _risks(values)
    return {t: int(np.count_nonzero(risks >= t)) for t in thresholds}
