"""Command-line driver: ``conjunct {ingest,split,predict,score,simulate,analyze}``.

Exit status is 0 on success, 1 on data errors (reported as one JSON object
on stderr) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cdm import CATEGORICAL_FIELDS, NUMERIC_FIELDS, final_risk
from .exceptions import ConjunctError
from .splitting import DEFAULT_RULE, DataSplit, crop_for_test, is_eligible

log = logging.getLogger("conjunct")

DATASET_ENV = "CONJUNCT_DATASET"


class DataError(Exception):
    """Bad input that is not a library error (existing output, bad file...)."""


# -- helpers ---------------------------------------------------------------------------


_NOT_CONFIG = ("func", "force", "verbose", "out", "projections")


def _config_hash(args) -> str:
    # output locations are not part of the configuration
    config = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    raw = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(raw).hexdigest()[:16]


def _metadata(args, seed=None) -> dict:
    return {
        "tool": "conjunct",
        "version": __version__,
        "command": args.command,
        "config_hash": _config_hash(args),
        "seed": seed,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _check_output(path, force: bool):
    if path is not None and path != "-" and Path(path).exists() and not force:
        raise DataError(f"{path} exists; pass --force to overwrite")


def _emit_json(payload, out=None):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _emit_csv(header, rows, out=None):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    if out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(out).write_text(buf.getvalue(), encoding="utf-8")


def _load_split(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if "split" not in payload:
        raise DataError(f"{path}: not a split file")
    return payload


def read_predictions(path) -> dict[str, float]:
    """Predictions CSV with header ``event_id,predicted_risk``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"event_id", "predicted_risk"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns event_id,predicted_risk")
        out = {}
        for row_no, row in enumerate(reader, start=2):
            event_id = row["event_id"]
            if event_id in out:
                raise DataError(f"{path}: duplicate prediction for event {event_id!r}")
            try:
                out[event_id] = float(row["predicted_risk"])
            except ValueError:
                raise DataError(f"{path}, row {row_no}: bad predicted_risk {row['predicted_risk']!r}") from None
        return out


def write_predictions(preds, out):
    _emit_csv(["event_id", "predicted_risk"], [(i, float(v)) for i, v in preds.values.items()], out)


# -- subcommands -------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    from .ingest import anonymize, assemble_database, read_dataset_csv, read_kvn_dir, read_manoeuvres, save_events

    if args.csv is None and args.kvn_dir is None:
        raise DataError(f"give --csv, --kvn-dir or set {DATASET_ENV}")
    _check_output(args.out, args.force)
    events = []
    if args.csv is not None:
        events += read_dataset_csv(args.csv)
    if args.kvn_dir is not None:
        events += read_kvn_dir(args.kvn_dir)
    ids = [e.event_id for e in events]
    if len(set(ids)) != len(ids):
        raise DataError("event ids collide between the CSV and KVN inputs")
    manoeuvres = read_manoeuvres(args.manoeuvres) if args.manoeuvres else None
    events, report = assemble_database(events, manoeuvres, prob_floor=args.prob_floor,
                                       speed_tolerance=args.speed_tolerance)
    if args.anonymize_seed is not None:
        events, _ = anonymize(events, args.anonymize_seed)
    meta = _metadata(args, args.anonymize_seed)
    save_events(args.out, events, report, metadata={k: v for k, v in meta.items() if k != "timestamp"})
    _emit_json({"metadata": meta, "report": report.to_dict(), "out": args.out})
    return 0


def cmd_split(args) -> int:
    from .ingest import load_events
    from .splitting import official_split, stratified_shuffle_split

    _check_output(args.out, args.force)
    events = load_events(args.events)
    if args.mode == "official":
        split = official_split(events, args.test_size, args.seed, p_high=args.p_high, p_low=args.p_low)
    else:
        split = stratified_shuffle_split(events, args.test_size, args.seed, stratify_missions=args.stratify_missions)
    by_id = {e.event_id: e for e in events}
    payload = {
        "metadata": _metadata(args, args.seed),
        "split": split.to_dict(),
        "test_truth": {i: final_risk(by_id[i]) for i in split.test},
    }
    _emit_json(payload, args.out)
    return 0


def _build_model(args):
    from .predictors import CascadeConfig, make_predictor

    params = {}
    if args.model == "sesc":
        if args.config:
            params["config"] = CascadeConfig.from_json(args.config)
        if args.overrides:
            params["overrides"] = read_predictions(args.overrides)
    elif args.model == "knn":
        params["k"] = args.k
    elif args.model == "magpies":
        from .predictors import MajorityVoteClassifier

        params["classifier"] = MajorityVoteClassifier(random_state=args.seed)
    return make_predictor(args.model, **params)


def _inputs_for(event):
    return crop_for_test(event).as_event() if is_eligible(event, DEFAULT_RULE) else event


def cmd_predict(args) -> int:
    from .ingest import load_events

    _check_output(args.out, args.force)
    events = load_events(args.events)
    split = DataSplit.from_dict(_load_split(args.split)["split"])
    by_id = {e.event_id: e for e in events}
    missing = [i for i in split.train + split.test if i not in by_id]
    if missing:
        raise DataError(f"{len(missing)} split ids are not in {args.events}")
    model = _build_model(args).fit([by_id[i] for i in split.train])
    ids = getattr(split, args.subset) if args.subset != "hold_out" else split.hold_out
    if ids is None:
        raise DataError(f"split has no {args.subset} subset")
    preds = model.predict_set([_inputs_for(by_id[i]) for i in ids])
    write_predictions(preds, args.out)
    return 0


def cmd_score(args) -> int:
    from .scoring import PredictionSet, competition_loss

    payload = _load_split(args.truth)
    split = DataSplit.from_dict(payload["split"])
    truth = payload.get("test_truth")
    if args.events:
        from .ingest import load_events

        truth = {e.event_id: final_risk(e) for e in load_events(args.events) if e.event_id in set(split.test)}
    if truth is None:
        raise DataError("split file carries no test truth; pass --events")
    if args.subset == "visible":
        if split.visible is None:
            raise DataError("split has no visible subset")
        ids = split.visible
    elif args.subset == "hold_out":
        ids = split.hold_out
    else:
        ids = split.test
    truth = {i: truth[i] for i in ids}
    preds = read_predictions(args.preds)
    report = competition_loss(truth, PredictionSet(preds), clip=not args.no_clip, beta=args.beta,
                              epsilon=args.epsilon)
    _check_output(args.out, args.force)
    _emit_json({"metadata": _metadata(args, split.seed), "subset": args.subset, "report": report.to_dict()}, args.out)
    return 0


def cmd_simulate(args) -> int:
    from .analysis import results_to_jsonl, run_virtual_competitions
    from .ingest import load_events
    from .predictors import make_predictor

    _check_output(args.out, args.force)
    events = load_events(args.events)
    if not args.all_events:
        events = [e for e in events if is_eligible(e)]
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    predictors = {}
    for name in models:
        if name == "lrp":
            continue
        params = {"k": args.k} if name == "knn" else {}
        predictors[name] = make_predictor(name, **params)
    test_sizes = tuple(args.test_sizes) if args.test_sizes else None
    kwargs = {"test_sizes": test_sizes} if test_sizes else {}
    results = run_virtual_competitions(events, predictors, args.n, seed=args.seed,
                                       parallelism=args.parallelism, **kwargs)
    body = results_to_jsonl(results)
    if args.out in (None, "-"):
        sys.stdout.write(body)
    else:
        Path(args.out).write_text(body, encoding="utf-8")
        failures = sum(1 for r in results if r.errors)
        _emit_json({"metadata": _metadata(args, args.seed), "competitions": len(results),
                    "events": len(events), "with_errors": failures, "out": args.out})
    return 0


def _analyze_correlation(args):
    from .analysis import aggregate_competitions, read_results_jsonl

    rows = aggregate_competitions(read_results_jsonl(args.results), reference=args.reference)
    header = list(rows[0]) if rows else ["test_size"]
    return header, [[row[h] for h in header] for row in rows]


def _analyze_relevance(args):
    from .analysis import RelevanceRecord, feature_relevance_aggregate

    with open(args.records, encoding="utf-8") as fh:
        records = [RelevanceRecord(**json.loads(line)) for line in fh if line.strip()]
    rows = feature_relevance_aggregate(records, include_all=args.include_all)
    return ["feature", "rank", "mean", "std"], [[r["feature"], r["rank"], r["mean"], r["std"]] for r in rows]


def _analyze_weibull(args):
    from .analysis import weibull_fit

    with open(args.input, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or args.column not in reader.fieldnames:
            raise DataError(f"{args.input}: no column {args.column!r}")
        values = [float(row[args.column]) for row in reader if row[args.column].strip()]
    fit = weibull_fit(values, tail_weight_gamma=args.gamma)
    return ["shape", "scale", "tail_weight", "n"], [[fit.shape, fit.scale, fit.tail_weight, len(values)]]


def _cdm_matrix(events):
    extra = sorted({k for e in events for c in e.cdms for k in c.features})
    names = [n for n in NUMERIC_FIELDS if n not in CATEGORICAL_FIELDS] + extra
    rows = [[np.nan if c.get(n) is None else c.get(n) for n in names] for e in events for c in e.cdms]
    return names, np.array(rows, dtype=float)


def _analyze_pca(args):
    from .analysis import PCA
    from .ingest import load_events

    events = load_events(args.events)
    names, X = _cdm_matrix(events)
    keep = ~np.isnan(X).all(axis=0)
    names, X = [n for n, k in zip(names, keep) if k], X[:, keep]
    model = PCA(n_components=args.components).fit(X)
    if args.projections:
        _check_output(args.projections, args.force)
        proj = model.transform(X)
        ids = [e.event_id for e in events for _ in e.cdms]
        _emit_csv(["event_id"] + [f"pc{i + 1}" for i in range(args.components)],
                  [[i, *map(float, p)] for i, p in zip(ids, proj)], args.projections)
    header = ["component", "explained_variance_ratio", *names]
    rows = [[i + 1, float(r), *map(float, c)]
            for i, (r, c) in enumerate(zip(model.explained_variance_ratio_, model.components_))]
    return header, rows


def _analyze_histogram(args):
    from .analysis import risk_histogram
    from .ingest import load_events

    hist = risk_histogram(load_events(args.events), args.bin_width, tuple(args.range))
    rows = [[float(lo), float(hi), int(n)] for lo, hi, n in zip(hist.edges[:-1], hist.edges[1:], hist.counts)]
    rows.append(["-inf", float(hist.edges[0]), hist.underflow])
    rows.append([float(hist.edges[-1]), "inf", hist.overflow])
    return ["bin_lo", "bin_hi", "count"], rows


ANALYSES = {
    "correlation": _analyze_correlation,
    "relevance": _analyze_relevance,
    "weibull": _analyze_weibull,
    "pca": _analyze_pca,
    "histogram": _analyze_histogram,
}


def cmd_analyze(args) -> int:
    _check_output(args.out, args.force)
    header, rows = ANALYSES[args.kind](args)
    _emit_csv(header, rows, args.out)
    if args.out not in (None, "-"):
        _emit_json(_metadata(args, getattr(args, "seed", None)), f"{args.out}.meta.json")
    return 0


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conjunct", description="Collision-risk forecasting toolkit.")
    parser.add_argument("--version", action="version", version=f"conjunct {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=func)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")
        return p

    p = add("ingest", cmd_ingest, "read CDM data, filter it and write an events file")
    p.add_argument("--csv", default=os.environ.get(DATASET_ENV), help=f"CSV export (default: ${DATASET_ENV})")
    p.add_argument("--kvn-dir")
    p.add_argument("--manoeuvres", help="CSV with event_id,manoeuvre_epoch")
    p.add_argument("--prob-floor", type=float, default=-15.0)
    p.add_argument("--speed-tolerance", type=float, default=0.0)
    p.add_argument("--anonymize-seed", type=int)
    p.add_argument("--out", required=True)

    p = add("split", cmd_split, "split events into train and test sets")
    p.add_argument("--events", required=True)
    p.add_argument("--mode", choices=("official", "stratified"), default="stratified")
    p.add_argument("--test-size", type=float, default=0.2)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--p-high", type=float, default=0.9)
    p.add_argument("--p-low", type=float, default=0.9)
    p.add_argument("--stratify-missions", action="store_true")
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "fit a model on the train split and predict the test events")
    p.add_argument("--model", choices=("crp", "lrp", "sesc", "magpies", "knn"), required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--config", help="cascade.json for the sesc model")
    p.add_argument("--overrides", help="predictions CSV of manual per-event outputs (sesc)")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subset", choices=("test", "visible", "hold_out", "train"), default="test")
    p.add_argument("--out", required=True)

    p = add("score", cmd_score, "score predictions with the competition metric")
    p.add_argument("--truth", required=True, help="split.json written by `conjunct split`")
    p.add_argument("--preds", required=True)
    p.add_argument("--events", help="take final risks from an events file instead")
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--epsilon", type=float, default=0.001)
    p.add_argument("--subset", choices=("test", "visible", "hold_out"), default="test")
    p.add_argument("--out")

    p = add("simulate", cmd_simulate, "run virtual competitions over stratified splits")
    p.add_argument("--events", required=True)
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--models", default="lrp,knn")
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--test-sizes", type=float, nargs="+")
    p.add_argument("--all-events", action="store_true", help="do not restrict to test-eligible events")
    p.add_argument("--out", required=True)

    p = add("analyze", cmd_analyze, "statistics tables as CSV")
    p.add_argument("kind", choices=sorted(ANALYSES))
    p.add_argument("--results", help="results.jsonl (correlation)")
    p.add_argument("--reference", default="lrp")
    p.add_argument("--records", help="relevance records, one JSON object per line (relevance)")
    p.add_argument("--include-all", action="store_true")
    p.add_argument("--input", help="CSV of distances (weibull)")
    p.add_argument("--column", default="distance")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--events", help="events file (pca, histogram)")
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--projections", help="also write per-CDM projections here (pca)")
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--range", type=float, nargs=2, default=(-30.0, 0.0), metavar=("LO", "HI"))
    p.add_argument("--out")
    return parser


_REQUIRED_BY_KIND = {
    "correlation": ("results",),
    "relevance": ("records",),
    "weibull": ("input",),
    "pca": ("events",),
    "histogram": ("events",),
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "analyze":
        for name in _REQUIRED_BY_KIND[args.kind]:
            if getattr(args, name) is None:
                parser.error(f"analyze {args.kind} needs --{name}")
    try:
        return args.func(args)
    except (ConjunctError, DataError, OSError, ValueError, KeyError) as exc:
        error = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        sys.stderr.write(json.dumps(error) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
