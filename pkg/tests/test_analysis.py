import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conjunct.analysis import (
    PCA,
    CompetitionResult,
    RelevanceRecord,
    WeibullFitter,
    aggregate_competitions,
    feature_relevance_aggregate,
    fraction_outperforming,
    paired_t_test,
    pca,
    read_results_jsonl,
    results_to_jsonl,
    risk_histogram,
    run_competition,
    run_virtual_competitions,
    spearman,
    threshold_counts,
    weibull_fit,
)
from conjunct.exceptions import (
    AllZeroWeights,
    DegenerateInput,
    LengthMismatch,
    NoConvergence,
    NonPositiveSample,
    RankDeficient,
)
from conjunct.predictors import CRPPredictor, LRPPredictor
from conjunct.scoring import ConfusionCounts, ScoreReport, competition_loss, truth_from_events
from conjunct.splitting import virtual_competition_split
from conjunct.synthetic import make_events
from oracles import pca_power_iteration, spearman_oracle, t_test_oracle


# -- Spearman and t-test -----------------------------------------------------------------


def test_spearman_examples():
    x = [0.3, 1.0, 2.5, 7.0]
    assert spearman(x, x) == 1.0
    assert spearman(x, x[::-1]) == -1.0
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)


def test_spearman_errors():
    with pytest.raises(LengthMismatch):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(DegenerateInput):
        spearman([1, 1, 1], [1, 2, 3])


@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=2, max_size=30))
def test_spearman_matches_quadratic_oracle(pairs):
    x, y = zip(*pairs)
    if len(set(x)) < 2 or len(set(y)) < 2:
        return
    assert spearman(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-12)


@given(st.lists(st.integers(-1000, 1000), min_size=3, max_size=25, unique=True), st.integers(0, 2**31))
def test_spearman_monotone_invariance(x, seed):
    # integers keep the maps strictly monotone in floating point
    y = np.random.default_rng(seed).permutation(len(x)).astype(float)
    base = spearman(x, y)
    assert spearman(np.exp(np.asarray(x) / 500), y) == pytest.approx(base, abs=1e-12)
    assert spearman(x, y ** 3 - 7) == pytest.approx(base, abs=1e-12)


def test_t_test_fixtures():
    d = [0.1, -0.2, 0.15, 0.05, -0.1]
    res = paired_t_test(d, [0.0] * 5)
    assert abs(res.t - 0.0) <= 1e-9 and abs(res.two_sided_p - 1.0) <= 1e-6 and res.dof == 4
    d = [0.31, -0.12, 0.25, 0.4, 0.07, 0.19]
    t, p = t_test_oracle(d)
    res = paired_t_test(d, [0.0] * 6)
    assert res.t == pytest.approx(t, abs=1e-9) and res.two_sided_p == pytest.approx(p, abs=1e-6)


def test_t_test_directional_and_degenerate():
    d = np.ones(8) + 1e-3 * np.array([1, -1, 2, -2, 1, -1, 2, -2])
    res = paired_t_test(d, np.zeros(8))
    assert res.t > 100 and res.two_sided_p < 1e-10
    with pytest.raises(DegenerateInput):
        paired_t_test([1, 2, 3], [1, 2, 3])


# -- virtual competitions -----------------------------------------------------------------


@pytest.fixture(scope="module")
def events():
    return make_events(300, high_fraction=0.1, seed=11, learnable=True)


def test_single_competition_matches_direct_scoring(events):
    result = run_competition(events, {}, index=0, seed=3, test_sizes=(0.3,))
    by_id = {e.event_id: e for e in events}
    lrp = LRPPredictor()
    split = virtual_competition_split(events, 0, 3, (0.3,))
    test = [by_id[i] for i in split.test]
    expected = competition_loss(truth_from_events(test), lrp.predict_set(test))
    assert result.test["lrp"] == expected
    assert result.n_test == len(split.test) and result.test_size == 0.3


def test_competition_records_failures(events):
    class Broken(CRPPredictor):
        def fit(self, X, y=None):
            from conjunct.exceptions import EmptyTrainSet
            raise EmptyTrainSet("boom")

    result = run_competition(events, {"bad": Broken(), "crp": CRPPredictor()}, 0, test_sizes=(0.2,))
    assert "bad" in result.errors and "bad" not in result.train and "crp" in result.test


def test_results_round_trip(tmp_path, events):
    results = run_virtual_competitions(events, {"crp": CRPPredictor()}, 4, seed=2)
    text = results_to_jsonl(results)
    (tmp_path / "r.jsonl").write_text(text)
    back = read_results_jsonl(tmp_path / "r.jsonl")
    assert results_to_jsonl(back) == text


def test_virtual_competitions_pure(events):
    a = run_virtual_competitions(events, {"crp": CRPPredictor()}, 6, seed=9)
    b = run_virtual_competitions(events, {"crp": CRPPredictor()}, 6, seed=9)
    assert results_to_jsonl(a) == results_to_jsonl(b)
    with pytest.raises(ValueError):
        run_virtual_competitions(events, {}, 0)


def test_parallel_matches_serial(events):
    a = run_virtual_competitions(events, {"crp": CRPPredictor()}, 5, seed=4, parallelism=1)
    b = run_virtual_competitions(events, {"crp": CRPPredictor()}, 5, seed=4, parallelism=2)
    assert results_to_jsonl(a) == results_to_jsonl(b)


# -- aggregation --------------------------------------------------------------------------


def report(mse, f2):
    return ScoreReport(ConfusionCounts(1, 0, 0, 0), 1.0, 1.0, f2, mse, mse / f2, 1, True)


def comp(test_size, train, test, index=0):
    return CompetitionResult(index=index, seed=index, test_size=test_size,
                             train={k: report(*v) for k, v in train.items()},
                             test={k: report(*v) for k, v in test.items()})


def test_aggregate_models_equal_to_reference():
    r = comp(0.2, {"lrp": (1, 0.5), "a": (1, 0.5), "b": (1, 0.5)}, {"lrp": (2, 0.5), "a": (2, 0.5), "b": (2, 0.5)})
    (row,) = aggregate_competitions([r])
    assert row["gain_inv_f2_test_mean"] == 0 and row["outperform_inv_f2_mean"] == 0


def test_aggregate_hand_computed():
    # reference inv_f2 = 2 on both sides; a: inv_f2 1 (gain 50%), b: inv_f2 4 (gain -100%)
    r = comp(0.5, {"lrp": (1.0, 0.5), "a": (0.5, 1.0), "b": (3.0, 0.25)},
             {"lrp": (1.0, 0.5), "a": (0.4, 1.0), "b": (2.0, 0.25)})
    (row,) = aggregate_competitions([r], test_sizes=[0.5, 0.9])[:1]
    assert row["gain_inv_f2_train_mean"] == pytest.approx(-25.0)
    assert row["gain_inv_f2_train_std"] == pytest.approx(75.0)
    assert row["outperform_inv_f2_mean"] == 50.0
    assert row["outperform_mse_hr_mean"] == 50.0
    assert row["spearman_mse_hr_mean"] == 1.0
    rows = aggregate_competitions([r], test_sizes=[0.5, 0.9])
    assert rows[1]["empty"] and rows[1]["n_competitions"] == 0


def test_aggregate_gains_scale_free():
    base = {"lrp": (1.0, 0.5), "a": (0.5, 0.8), "b": (3.0, 0.25)}
    scaled = {k: (m, f / 3.0) for k, (m, f) in base.items()}
    (r1,) = aggregate_competitions([comp(0.3, base, base)])
    (r2,) = aggregate_competitions([comp(0.3, scaled, scaled)])
    assert r1["gain_inv_f2_test_mean"] == pytest.approx(r2["gain_inv_f2_test_mean"], abs=1e-12)


def test_fraction_outperforming():
    results = [comp(0.2, {"lrp": (1, 0.5), "a": (1, 0.6)}, {"lrp": (1, 0.5), "a": (1, 0.6 if i else 0.4)}, i)
               for i in range(4)]
    assert fraction_outperforming(results, "a") == 0.75
    with pytest.raises(DegenerateInput):
        fraction_outperforming(results, "missing")


# -- relevance ---------------------------------------------------------------------------


def test_relevance_single_record():
    rows = feature_relevance_aggregate([RelevanceRecord("m", {"a": 3, "b": 1}, weight=1.0)])
    assert [(r["feature"], r["rank"], r["mean"]) for r in rows] == [("a", 1, 75.0), ("b", 2, 25.0)]


def test_relevance_weighted_stats():
    recs = [RelevanceRecord("m1", {"a": 100, "b": 0}, 0.3), RelevanceRecord("m2", {"a": 0, "b": 100}, 0.3)]
    rows = feature_relevance_aggregate(recs)
    assert all(r["mean"] == pytest.approx(50) and r["std"] == pytest.approx(50) for r in rows)


def test_relevance_selection():
    recs = [RelevanceRecord("good", {"a": 1, "b": 0}, 0.2, train_gain=0.1),
            RelevanceRecord("bad", {"a": 0, "b": 1}, -0.1, train_gain=0.1),
            RelevanceRecord("overfit", {"a": 0, "b": 1}, 0.2, train_gain=-0.1)]
    assert feature_relevance_aggregate(recs)[0]["mean"] == 100.0
    both = feature_relevance_aggregate(recs, include_all=True)
    assert {r["feature"]: r["mean"] for r in both} == pytest.approx({"a": 100 / 3, "b": 200 / 3})
    with pytest.raises(AllZeroWeights):
        feature_relevance_aggregate(recs[1:])


# -- Weibull --------------------------------------------------------------------------


def test_weibull_exponential_case():
    x = np.random.default_rng(1).weibull(1.0, 100_000) * 2.0
    fit = weibull_fit(x, tail_weight_gamma=0)
    assert abs(fit.shape - 1) < 0.05
    assert fit.scale == pytest.approx(x.mean(), rel=0.02)


def test_weibull_consistency():
    errors = []
    for n in (1_000, 10_000, 100_000):
        fits = [abs(weibull_fit(np.random.default_rng(s).weibull(1.5, n) * 3.0, 0).shape - 1.5) for s in range(5)]
        errors.append(np.median(fits))
    assert errors[0] > errors[1] > errors[2]


def test_weibull_tail_weighting_shifts_fit():
    x = np.random.default_rng(3).weibull(1.5, 20_000) * 3.0
    plain = weibull_fit(x, 0)
    tail = weibull_fit(x, 2.0)
    assert tail.tail_weight == 2.0 and plain.tail_weight == 0
    assert abs(tail.shape - plain.shape) < 0.3  # same family, fit still sensible


def test_weibull_degenerate_inputs():
    tight = 5.0 + 1e-6 * np.random.default_rng(0).normal(size=50)
    assert weibull_fit(tight, 0).shape > 1000
    with pytest.raises(NonPositiveSample):
        weibull_fit([1.0] * 9 + [-1.0], 0)
    with pytest.raises(NoConvergence):
        weibull_fit([2.0] * 20, 0)
    with pytest.raises(ValueError):
        weibull_fit([1.0, 2.0], 0)


def test_weibull_estimator():
    x = np.random.default_rng(2).weibull(2.0, 5000)
    model = WeibullFitter(tail_weight_gamma=0).fit(x)
    assert abs(model.shape_ - 2.0) < 0.1
    cdf = weibull_fit(x, 0).cdf([0.0, 1e9])
    assert cdf.tolist() == [0.0, 1.0]


# -- PCA ------------------------------------------------------------------------------


def test_pca_matches_power_iteration():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(400, 5)) @ rng.normal(size=(5, 5))
    X[rng.random(X.shape) < 0.05] = np.nan
    result = pca(X, 3)
    vectors, ratios = pca_power_iteration(X, 3)
    assert np.allclose(result.components, vectors, atol=1e-6)
    assert np.allclose(result.explained_variance_ratio, ratios, atol=1e-9)


def test_pca_diagonal_and_centering():
    t = np.linspace(-1, 1, 101)
    X = np.column_stack([t, 3 * t + 2])
    result = pca(X, 1)
    assert np.allclose(result.components[0], [1 / math.sqrt(2)] * 2, atol=1e-6)
    assert result.explained_variance_ratio[0] == pytest.approx(1.0)
    Y = np.random.default_rng(0).normal(size=(200, 4))
    assert np.allclose(pca(Y, 2).projections.mean(axis=0), 0, atol=1e-12)


def test_pca_rank_deficient():
    t = np.arange(10.0)
    with pytest.raises(RankDeficient):
        pca(np.column_stack([t, 2 * t]), 2)
    with pytest.raises(RankDeficient):
        PCA(n_components=3).fit(np.random.default_rng(0).normal(size=(20, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 7))
def test_pca_orthonormal(seed, d):
    X = np.random.default_rng(seed).normal(size=(60, d))
    c = pca(X, 3).components
    assert np.allclose(c @ c.T, np.eye(3), atol=1e-9)
    r = pca(X, 3).explained_variance_ratio
    assert np.all(np.diff(r) <= 0) and r.sum() <= 1 + 1e-12


# -- histograms -----------------------------------------------------------------------


def test_histogram_examples():
    h = risk_histogram([-5.5, -5.4], 1.0, (-6, -4))
    assert h.counts.tolist() == [2, 0] and h.underflow == 0
    h = risk_histogram([-30.0] * 4, 1.0, (-20, 0))
    assert h.underflow == 4 and h.counts.sum() == 0
    h = risk_histogram([0.0, -30.0], 1.0)
    assert h.counts[0] == 1 and h.counts[-1] == 1
    with pytest.raises(ValueError):
        risk_histogram([1], 0)


def test_threshold_counts_inclusive():
    assert threshold_counts([-4.0, -5.0, -6.0, -7.0]) == {-4.0: 1, -5.0: 2, -6.0: 3}
    events = make_events(20, seed=1)
    assert sum(risk_histogram(events).counts) == 20
