"""Command line: train, predict, evaluate, compare, synth.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or input.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .baselines import SyntheticSpec, generate_synthetic
from .interval_models import predict
from .exclusion import apply_exclusion, exclusion_summary
from .metrics import DEFAULT_TAUS, evaluate, miss_overkill
from .pipeline import (
    ConfigError,
    RunConfig,
    StageError,
    artifact_dict,
    dumps,
    fit_dca,
    load_artifact,
    prepare,
    run_compare,
    stage,
    train_report,
)

log = logging.getLogger("dynclass")

OUTCOME_COLUMNS = ["row_id", "interval", "prediction", "range_low", "range_high", "excluded"]


def _write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load_config(args) -> RunConfig:
    with stage("config", input_stage=True):
        cfg = RunConfig.from_file(args.config)
        if getattr(args, "input", None):
            cfg.input = args.input
        if getattr(args, "target", None):
            cfg.target = args.target
        cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data = prepare(cfg)
    model = fit_dca(cfg, data)
    with stage("report"):
        report = train_report(cfg, data, model, cfg.seed)
        artifact = artifact_dict(cfg, model, data, data.train.columns)
        texts = {args.artifact: dumps(artifact)}
        if args.report:
            texts[args.report] = dumps(report)
    for path, text in texts.items():
        _write_text(path, text)
    print(f"dc_error={model.dc_result.dc_error:.6f} kind={model.dc_result.kind} "
          f"stop={model.dc_result.stop_reason} warnings={model.dc_result.warnings}")
    return 0


def _outcomes_csv(outcomes, truth=None, truth_name="truth") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = OUTCOME_COLUMNS + ([truth_name] if truth is not None else [])
    writer.writerow(header)
    for i, o in enumerate(outcomes):
        row = [o.row_id, o.interval, repr(o.value),
               "" if np.isnan(o.low) else repr(o.low),
               "" if np.isnan(o.high) else repr(o.high),
               int(o.excluded)]
        if truth is not None:
            row.append(repr(float(truth[i])))
        writer.writerow(row)
    return buf.getvalue()


def cmd_predict(args) -> int:
    with stage("load_artifact", input_stage=True):
        doc, ensemble = load_artifact(args.artifact)
    features = doc["feature_names"]
    target = doc.get("target_name")
    with stage("read_input", input_stage=True):
        try:
            frame = pd.read_csv(args.input, skipinitialspace=True, float_precision="round_trip")
        except pd.errors.EmptyDataError:
            frame = pd.DataFrame(columns=features)
        missing = [c for c in features if c not in frame.columns]
        if missing:
            raise ConfigError(f"input lacks feature columns {missing}")
        cols = features + ([target] if target in frame.columns else [])
        frame = frame[cols].apply(pd.to_numeric, errors="raise")
        usable = frame[features].notna().all(axis=1)
        if (~usable).any():
            log.warning("skipping %d rows with missing features", int((~usable).sum()))
        frame = frame[usable]
    with stage("predict"):
        outcomes = predict(ensemble, frame[features].to_numpy(float), frame.index.to_numpy())
        outcomes = apply_exclusion(outcomes, ensemble.valid_ranges())
        truth = frame[target].to_numpy(float) if target in frame.columns else None
        text = _outcomes_csv(outcomes, truth)
    _write_text(args.output, text)
    print(f"wrote {len(outcomes)} outcomes to {args.output}")
    return 0


def evaluate_outcomes(frame: pd.DataFrame, truths: np.ndarray, taus) -> dict:
    preds = frame["prediction"].to_numpy(float)
    excluded = frame["excluded"].to_numpy(int).astype(bool)
    keep = ~excluded
    out = {"n_rows": int(len(frame)), "excluded": int(excluded.sum()),
           "excluded_rate": float(excluded.mean()) if len(frame) else 0.0,
           "taus": list(taus)}
    out["all"] = evaluate(truths, preds, taus).to_dict() if len(frame) >= 2 else None
    out["retained"] = evaluate(truths[keep], preds[keep], taus).to_dict() if keep.sum() >= 2 else None
    out["exclusion"] = miss_overkill(excluded, truths, preds, taus[0])
    return out


def cmd_evaluate(args) -> int:
    taus = args.tau or list(DEFAULT_TAUS)
    with stage("read_outcomes", input_stage=True):
        frame = pd.read_csv(args.outcomes, float_precision="round_trip")
        missing = [c for c in OUTCOME_COLUMNS if c not in frame.columns]
        if missing:
            raise ConfigError(f"outcome file lacks columns {missing}")
        if args.truth_file:
            truth = pd.read_csv(args.truth_file, float_precision="round_trip")
            if "row_id" not in truth.columns or args.truth_column not in truth.columns:
                raise ConfigError(f"truth file needs row_id and {args.truth_column!r} columns")
            truth = truth.set_index("row_id")[args.truth_column]
            ids = frame["row_id"]
            if not ids.isin(truth.index).all() or len(truth) != len(frame):
                raise ConfigError("row ids of outcomes and truths do not match")
            truths = truth.loc[ids].to_numpy(float)
        else:
            if args.truth_column not in frame.columns:
                raise ConfigError(f"outcome file lacks truth column {args.truth_column!r}")
            truths = frame[args.truth_column].to_numpy(float)
    with stage("evaluate"):
        report = evaluate_outcomes(frame, truths, taus)
    text = dumps(report)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def comparison_csv(doc: dict) -> str:
    rows = doc["rows"]
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in keys})
    return buf.getvalue()


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    doc = run_compare(cfg)
    json_text, csv_text = dumps(doc), comparison_csv(doc)
    if args.json:
        _write_text(args.json, json_text)
    if args.csv:
        _write_text(args.csv, csv_text)
    if not args.json and not args.csv:
        sys.stdout.write(json_text)
    return 0


def cmd_synth(args) -> int:
    with stage("synth", input_stage=True):
        spec = SyntheticSpec(args.n, args.features, args.distribution, args.correlation,
                             args.noise, args.seed, args.mean, args.scale)
        ds = generate_synthetic(spec)
    frame = pd.DataFrame(ds.X, columns=list(ds.columns))
    frame[ds.target_name] = ds.y
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out, index=False, float_format="%.17g")
    print(f"wrote {len(ds)} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynclass", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit segmentation, classifier and interval regressors")
    t.add_argument("config")
    t.add_argument("--artifact", default="model.json")
    t.add_argument("--report")
    t.add_argument("--input")
    t.add_argument("--target")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="score a CSV with a trained artifact")
    pr.add_argument("artifact")
    pr.add_argument("input")
    pr.add_argument("output")
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="metrics for an outcome CSV")
    e.add_argument("outcomes")
    e.add_argument("--truth-column", default="truth")
    e.add_argument("--truth-file")
    e.add_argument("--tau", type=float, action="append")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="DP, KC, GC, DC and DC-E on the same split")
    c.add_argument("config")
    c.add_argument("--json")
    c.add_argument("--csv")
    c.add_argument("--input")
    c.add_argument("--target")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--features", type=int, default=4)
    s.add_argument("--distribution", choices=["normal", "uniform"], default="normal")
    s.add_argument("--correlation", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--mean", type=float, default=100.0)
    s.add_argument("--scale", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
