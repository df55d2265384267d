import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conjunct.exceptions import IdMismatch, NoHighRiskEvents, NonFinite, ZeroF2
from conjunct.scoring import (
    ConfusionCounts,
    PredictionSet,
    ScoreReport,
    clip_predictions,
    competition_loss,
    confusion,
    f_beta,
    mse_hr,
    truth_from_events,
)
from conftest import make_event
from oracles import loss_oracle

FOUR_TRUTH = {"a": -5.0, "b": -7.0, "c": -5.5, "d": -8.0}
FOUR_PREDS = {"a": -5.0, "b": -6.001, "c": -6.001, "d": -6.001}


@pytest.mark.parametrize("truth,pred,field", [(-5, -5, "tp"), (-5, -6.001, "fn"), (-8, -5.5, "fp"), (-8, -9, "tn")])
def test_confusion_single(truth, pred, field):
    counts = confusion({"e": truth}, PredictionSet({"e": pred}))
    assert getattr(counts, field) == 1
    assert counts.total == 1


def test_f_beta_cases():
    assert f_beta(ConfusionCounts(tp=3, fp=0, tn=5, fn=0)) == 1.0
    assert f_beta(ConfusionCounts(tp=1, fp=0, tn=0, fn=1)) == pytest.approx(5 / 9, abs=1e-15)
    assert f_beta(ConfusionCounts(tp=0, fp=3, tn=0, fn=2)) == 0.0
    with pytest.raises(ValueError):
        f_beta(ConfusionCounts(1, 0, 0, 0), beta=0)


def test_mse_hr_cases():
    assert mse_hr({"a": -5}, {"a": -5}) == 0
    assert mse_hr({"a": -5}, {"a": -6.001}) == pytest.approx(1.002001, abs=1e-12)
    with pytest.raises(NoHighRiskEvents):
        mse_hr({"a": -8, "b": -9}, {"a": -8, "b": -9})


def test_clip_examples():
    out = clip_predictions(PredictionSet({"a": -30, "b": -5, "c": -6, "d": -6.0005}))
    assert out.values == {"a": -6.001, "b": -5, "c": -6, "d": -6.0005}
    assert out.clipped


def test_four_event_fixture():
    report = competition_loss(FOUR_TRUTH, PredictionSet(FOUR_PREDS))
    assert (report.counts.tp, report.counts.fn, report.counts.fp, report.counts.tn) == (1, 1, 0, 2)
    assert report.f_beta == pytest.approx(5 / 9, abs=1e-12)
    assert report.mse_hr == pytest.approx(0.1255005, abs=1e-9)
    assert report.loss == pytest.approx(0.2259009, abs=1e-9)


def test_perfect_predictions_zero_loss():
    truth = {"a": -5.0, "b": -12.0, "c": -4.2}
    assert competition_loss(truth, dict(truth)).loss == 0


def test_zero_f2_reported_as_undefined():
    truth = {"a": -5.0, "b": -8.0}
    preds = {"a": -9.0, "b": -9.0}
    report = competition_loss(truth, preds)
    assert report.f_beta == 0 and report.loss is None
    assert report.metric("loss") == math.inf and report.inv_f_beta == math.inf
    with pytest.raises(ZeroF2):
        competition_loss(truth, preds, strict=True)


def test_id_mismatch_and_non_finite():
    with pytest.raises(IdMismatch):
        competition_loss({"a": -5}, {"b": -5})
    with pytest.raises(NonFinite):
        competition_loss({"a": -5}, {"a": math.nan})
    with pytest.raises(IdMismatch):
        PredictionSet.from_arrays(["a", "a"], [1, 2])


def test_report_round_trip():
    report = competition_loss(FOUR_TRUTH, FOUR_PREDS)
    data = report.to_dict()
    assert "f2" in data
    assert ScoreReport.from_dict(data) == report


def test_truth_from_events():
    events = [make_event("a", [3, 0.5], [-8, -5]), make_event("b", [3, 0.5], [-8, -30])]
    assert truth_from_events(events) == {"a": -5, "b": -30}


risk = st.one_of(st.just(-30.0), st.just(-6.0), st.just(-6.001), st.floats(-30, 0))


@st.composite
def fixtures(draw):
    n = draw(st.integers(1, 40))
    truth = {str(i): draw(risk) for i in range(n)}
    preds = {str(i): draw(risk) for i in range(n)}
    return truth, preds


@settings(max_examples=300)
@given(fixtures())
def test_matches_oracle(fixture):
    truth, preds = fixture
    tp, fp, fn, f, mse, loss = loss_oracle(truth, preds)
    if mse is None:
        with pytest.raises(NoHighRiskEvents):
            competition_loss(truth, preds)
        return
    report = competition_loss(truth, preds)
    assert (report.counts.tp, report.counts.fp, report.counts.fn) == (tp, fp, fn)
    assert report.f_beta == pytest.approx(f, rel=1e-12, abs=0)
    assert report.mse_hr == pytest.approx(mse, rel=1e-12, abs=1e-300)
    if loss is None:
        assert report.loss is None
    else:
        assert report.loss == pytest.approx(loss, rel=1e-12, abs=1e-300)


@settings(max_examples=300)
@given(fixtures())
def test_clipping_never_changes_class_or_raises_loss(fixture):
    truth, preds = fixture
    if not any(r >= -6 for r in truth.values()):
        return
    raw = competition_loss(truth, preds, clip=False)
    clipped = competition_loss(truth, preds, clip=True)
    assert clipped.f_beta == raw.f_beta
    assert clipped.counts == raw.counts
    if raw.loss is not None:
        assert clipped.loss <= raw.loss


@given(st.dictionaries(st.text(min_size=1, max_size=3), st.floats(-30, 0), max_size=20))
def test_clip_idempotent(values):
    once = clip_predictions(PredictionSet(values))
    assert clip_predictions(once).values == once.values
    assert all(v >= -6.001 for v in once.values.values())
