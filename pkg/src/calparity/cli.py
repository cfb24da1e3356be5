"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 regime-audit violation,
4 component failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_COMPONENT = 0, 2, 3, 4

log = logging.getLogger("calparity")


class UsageError(ValueError):
    pass


def read_score_csv(path, need_groups: bool = False):
    """Columns ``score,label[,group]``; group ids must be non-negative integers."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {path}") from exc
    if not rows:
        raise UsageError(f"{path}: no rows")
    cols = rows[0].keys()
    for c in ("score", "label") + (("group",) if need_groups else ()):
        if c not in cols:
            raise UsageError(f"{path}: missing column {c!r}")
    try:
        s = np.array([float(r["score"]) for r in rows])
        y = np.array([float(r["label"]) for r in rows])
        g = np.array([int(r["group"]) for r in rows]) if "group" in cols else None
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise UsageError(f"{path}: non-binary label")
    if g is not None and np.any(g < 0):
        raise UsageError(f"{path}: group ids must be non-negative")
    return s, y, g


def write_score_csv(path, scores, labels, groups=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["score", "label"] + (["group"] if groups is not None else []))
        for k in range(len(scores)):
            row = [repr(float(scores[k])), int(labels[k])]
            if groups is not None:
                row.append(int(groups[k]))
            w.writerow(row)


def _json_arg(text, what):
    if text is None:
        return {}
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} is not valid JSON: {exc}") from exc
    if not isinstance(value, dict):
        raise UsageError(f"{what} must be a JSON object")
    return value


# ---------------------------------------------------------------- commands

SYNTH_DEFAULT = {
    "n": 20000, "p": 5, "n_groups": 2,
    "group_weights": [[1.0, -1.0, 0.5, 0.0, 0.0], [1.0, -1.0, 0.5, 0.0, 0.0]],
    "group_bias": [-1.0, 1.0], "group_proportions": [0.5, 0.5], "seed": 0,
}


def cmd_synth(args) -> int:
    from .data import SynthConfig, synth_generate, write_csv

    doc = dict(SYNTH_DEFAULT)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read synth config: {exc}") from exc
    if args.n is not None:
        doc["n"] = args.n
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        cfg = SynthConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid synth config: {exc}") from exc
    ds, true_p = synth_generate(cfg)
    write_csv(ds, args.out, true_p=true_p if args.true_p else None)
    print(f"wrote {ds.n} rows, {len(ds.feature_names)} features, {ds.n_groups} groups to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .harness import report, run_experiment
    from .harness.config import load_config, load_dataset

    cfg = load_config(args.config)
    results = []
    audit: list = []
    for entry in cfg.datasets:
        ds = load_dataset(entry, cfg.base_dir)
        results += run_experiment(ds, cfg.methods, cfg.trials, cfg.base_seed, tune_trials=cfg.tune_trials,
                                  metric_kinds=cfg.metric_kinds, candidate_features=entry.candidate_features,
                                  dataset_name=entry.name, audit_log=audit)
    out = Path(args.out)
    for path in report(results, out, tuple(args.formats.split(",")), cfg.selection_metric):
        print(path)
    with open(out / "audit.json", "w", encoding="utf-8") as fh:
        json.dump(audit, fh, indent=1)
    return EXIT_OK


def cmd_pareto(args) -> int:
    from .harness import frontier_rows

    results = _load_results(args.results)
    rows = [r for r in frontier_rows(results, args.metric) if args.dataset in (None, r["dataset"])]
    w = csv.writer(sys.stdout)
    w.writerow(["dataset", "model_kind", "method", "regime", "y_mean", "on_front"])
    for r in rows:
        if r["on_front"] or args.all:
            w.writerow([r["dataset"], r["model_kind"], r["method"], r["regime"], repr(r["y_mean"]), r["on_front"]])
    return EXIT_OK


def _load_results(path):
    from .harness import load_results_csv

    try:
        return load_results_csv(path)
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {path}") from exc


def cmd_report(args) -> int:
    from .harness import report, summaries

    results = _load_results(args.results)
    for path in report(results, args.out, tuple(args.formats.split(",")), args.metric):
        print(path)
    for kind, summary in summaries(results, args.metric).items():
        print(f"[{kind}]")
        for row in summary["rows"]:
            print(row["text"])
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .calibrators import calibrator_from_dict, fit_calibrator

    if args.load:
        try:
            cal = calibrator_from_dict(json.loads(Path(args.load).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read calibrator: {exc}") from exc
        s, y, g = read_score_csv(args.input)
    else:
        if not args.kind:
            raise UsageError("either --kind (to fit) or --load (to reuse) is required")
        group_aware = args.kind in ("per_group", "group_robust")
        s, y, g = read_score_csv(args.input, need_groups=group_aware)
        cal = fit_calibrator(args.kind, s, y, g if group_aware else None, **_json_arg(args.params, "--params"))
    if args.save:
        Path(args.save).write_text(json.dumps(cal.to_dict()), encoding="utf-8")
        print(f"saved {cal.kind} calibrator to {args.save}")
    if args.output:
        write_score_csv(args.output, cal.apply(s, g), y, g)
        print(f"wrote calibrated scores to {args.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from . import metrics

    s, y, g = read_score_csv(args.input)
    out = {"n": int(s.size), "overall": {}, "worst_group": {}}
    for kind in args.metrics.split(","):
        fn = metrics.get_metric(kind)
        out["overall"][kind] = fn(s, y).value
        if g is not None and kind != "accuracy":
            value, gid = metrics.worst_group(s, y, g, kind)
            out["worst_group"][kind] = {"value": value.value, "group": gid}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="calparity", description="Calibration-parity toolkit and benchmark harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset CSV")
    s.add_argument("--config", help="JSON generator config (defaults to a two-group opposite-bias design)")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--true-p", action="store_true", help="append the __true_p column")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bench", help="run an experiment config and write reports")
    b.add_argument("--config", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--formats", default="csv,json,svg")
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("pareto", help="print the Pareto front from results.csv")
    f.add_argument("--results", required=True)
    f.add_argument("--metric", default="ecce_mean")
    f.add_argument("--dataset")
    f.add_argument("--all", action="store_true", help="also print dominated methods")
    f.set_defaults(func=cmd_pareto)

    r = sub.add_parser("report", help="re-emit report files from results.csv")
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--metric", default="ecce_mean")
    r.add_argument("--formats", default="csv,json,svg")
    r.set_defaults(func=cmd_report)

    c = sub.add_parser("calibrate", help="fit or apply a calibrator on a score CSV (score,label[,group])")
    c.add_argument("input")
    c.add_argument("--kind")
    c.add_argument("--params", help="JSON object of fit options")
    c.add_argument("--load", help="calibrator JSON to apply instead of fitting")
    c.add_argument("--save", help="write the fitted calibrator JSON here")
    c.add_argument("--output", help="write calibrated scores here")
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("evaluate", help="calibration metrics of a score CSV")
    e.add_argument("input")
    e.add_argument("--metrics", default="ecce_mean,ecce_max,msce,mmce,ece,brier,accuracy")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    from .calibrators import CalibrationError, UnsupportedCalibrator
    from .harness import ComponentError, RegimeViolation
    from .harness.config import ConfigError
    from .metrics import MetricError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RegimeViolation as exc:
        print(f"regime violation: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except (ConfigError, UsageError, UnsupportedCalibrator) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ComponentError, CalibrationError, MetricError) as exc:
        print(f"component failure: {exc}", file=sys.stderr)
        return EXIT_COMPONENT


if __name__ == "__main__":
    sys.exit(main())
