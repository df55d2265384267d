import csv
import json
import subprocess
import sys

import pytest

from conjunct.cli import main, read_predictions
from conjunct.ingest import assemble_database, load_events, read_dataset_csv, write_dataset_csv
from conjunct.predictors import lrp_predict
from conjunct.scoring import competition_loss
from conjunct.splitting import crop_for_test, official_split
from conjunct.synthetic import make_events


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def strip_timestamp(text):
    data = json.loads(text)
    data.get("metadata", data).pop("timestamp", None)
    return data


@pytest.fixture
def workspace(tmp_path, capsys):
    write_dataset_csv(make_events(300, high_fraction=0.1, seed=5, eligible_fraction=0.8, learnable=True),
                      tmp_path / "data.csv")
    code, _, _ = run(capsys, "ingest", "--csv", tmp_path / "data.csv", "--out", tmp_path / "ev.bin")
    assert code == 0
    return tmp_path


def test_end_to_end_matches_library(workspace, capsys):
    w = workspace
    assert run(capsys, "split", "--events", w / "ev.bin", "--mode", "official", "--test-size", 0.4,
               "--seed", 7, "--out", w / "split.json")[0] == 0
    assert run(capsys, "predict", "--model", "lrp", "--events", w / "ev.bin", "--split", w / "split.json",
               "--out", w / "p.csv")[0] == 0
    code, out, _ = run(capsys, "score", "--truth", w / "split.json", "--preds", w / "p.csv")
    assert code == 0
    cli_report = json.loads(out)["report"]

    events, _ = assemble_database(read_dataset_csv(w / "data.csv"))
    split = official_split(events, test_size=0.4, seed=7)
    by_id = {e.event_id: e for e in events}
    test = [crop_for_test(by_id[i]) for i in split.test]
    preds = lrp_predict([c.as_event() for c in test])
    expected = competition_loss({c.event_id: c.target_risk for c in test}, preds)
    assert read_predictions(w / "p.csv") == preds.values
    assert cli_report == json.loads(json.dumps(expected.to_dict()))
    meta = json.loads(out)["metadata"]
    assert meta["seed"] == 7 and meta["version"] and len(meta["config_hash"]) == 16


def test_reports_reproducible(workspace, capsys):
    w = workspace
    outs = []
    for name in ("a.json", "b.json"):
        run(capsys, "split", "--events", w / "ev.bin", "--seed", 3, "--out", w / name)
        outs.append(strip_timestamp((w / name).read_text()))
    assert outs[0] == outs[1]


def test_every_model_predicts(workspace, capsys):
    w = workspace
    run(capsys, "split", "--events", w / "ev.bin", "--mode", "official", "--seed", 1, "--out", w / "s.json")
    cfg = w / "cascade.json"
    cfg.write_text(json.dumps({"enabled_steps": [0, 1, 2, 6]}))
    for model in ("crp", "lrp", "sesc", "magpies", "knn"):
        extra = ["--config", cfg] if model == "sesc" else []
        code, _, err = run(capsys, "predict", "--model", model, "--events", w / "ev.bin", "--split", w / "s.json",
                           "--out", w / f"{model}.csv", *extra)
        assert code == 0, err
        code, out, _ = run(capsys, "score", "--truth", w / "s.json", "--preds", w / f"{model}.csv",
                           "--subset", "test")
        assert code == 0 and "loss" in json.loads(out)["report"]


def test_visible_and_hold_out_scoring(workspace, capsys):
    w = workspace
    run(capsys, "split", "--events", w / "ev.bin", "--mode", "official", "--seed", 1, "--p-high", 0.5,
        "--p-low", 0.5, "--out", w / "s.json")
    for subset in ("visible", "hold_out"):
        run(capsys, "predict", "--model", "lrp", "--events", w / "ev.bin", "--split", w / "s.json",
            "--subset", subset, "--out", w / f"{subset}.csv")
        code, out, err = run(capsys, "score", "--truth", w / "s.json", "--preds", w / f"{subset}.csv",
                             "--subset", subset)
        assert code == 0, err


def test_refuses_to_overwrite(workspace, capsys):
    w = workspace
    run(capsys, "split", "--events", w / "ev.bin", "--seed", 1, "--out", w / "s.json")
    code, _, err = run(capsys, "split", "--events", w / "ev.bin", "--seed", 1, "--out", w / "s.json")
    assert code == 1 and json.loads(err)["error"] == "DataError"
    assert run(capsys, "split", "--events", w / "ev.bin", "--seed", 1, "--out", w / "s.json", "--force")[0] == 0


def test_data_errors_exit_1(tmp_path, capsys):
    (tmp_path / "bad.csv").write_text("event_id,risk\n1,-5\n")
    code, _, err = run(capsys, "ingest", "--csv", tmp_path / "bad.csv", "--out", tmp_path / "ev.bin")
    assert code == 1
    assert json.loads(err)["error"] == "SchemaError"
    code, _, err = run(capsys, "score", "--truth", tmp_path / "nope.json", "--preds", tmp_path / "p.csv")
    assert code == 1


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["split", "--bogus"])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["analyze", "weibull"])
    assert info.value.code == 2


def test_dataset_env_var(tmp_path, capsys, monkeypatch):
    write_dataset_csv(make_events(20, seed=1), tmp_path / "d.csv")
    monkeypatch.setenv("CONJUNCT_DATASET", str(tmp_path / "d.csv"))
    code, out, _ = run(capsys, "ingest", "--out", tmp_path / "ev.bin")
    assert code == 0 and json.loads(out)["report"]["events_read"] == 20
    monkeypatch.delenv("CONJUNCT_DATASET")
    assert run(capsys, "ingest", "--out", tmp_path / "ev2.bin")[0] == 1


def test_simulate_and_analyze(workspace, capsys):
    w = workspace
    code, out, err = run(capsys, "simulate", "--events", w / "ev.bin", "--n", 6, "--seed", 2,
                         "--models", "lrp,crp", "--out", w / "r.jsonl")
    assert code == 0, err
    assert json.loads(out)["competitions"] == 6
    assert len((w / "r.jsonl").read_text().splitlines()) == 6
    code, out, _ = run(capsys, "analyze", "correlation", "--results", w / "r.jsonl")
    assert code == 0 and out.startswith("test_size,")
    code, out, _ = run(capsys, "analyze", "histogram", "--events", w / "ev.bin", "--out", w / "h.csv")
    rows = list(csv.DictReader((w / "h.csv").open()))
    assert sum(int(r["count"]) for r in rows) == len(load_events(w / "ev.bin"))
    assert (w / "h.csv.meta.json").exists()
    code, out, _ = run(capsys, "analyze", "pca", "--events", w / "ev.bin", "--components", 2,
                       "--projections", w / "proj.csv")
    assert code == 0 and len(out.splitlines()) == 3


def test_analyze_relevance_and_weibull(tmp_path, capsys):
    records = tmp_path / "rec.jsonl"
    records.write_text(json.dumps({"model_id": "m", "gains": {"a": 3, "b": 1}, "weight": 1.0}) + "\n")
    code, out, _ = run(capsys, "analyze", "relevance", "--records", records)
    assert code == 0 and out.splitlines()[1].startswith("a,1,75.0")
    import numpy as np
    dist = tmp_path / "d.csv"
    dist.write_text("distance\n" + "\n".join(map(repr, np.random.default_rng(0).weibull(2, 500).tolist())))
    code, out, _ = run(capsys, "analyze", "weibull", "--input", dist, "--gamma", 0)
    assert code == 0 and out.startswith("shape,scale")


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "conjunct.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "conjunct" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "conjunct.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr
