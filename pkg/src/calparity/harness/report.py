"""Result files: long-format CSV, summary JSON, frontier CSV and SVG."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .experiment import MethodResult, TrialRecord
from .pareto import ParetoPoint, pareto_front, summarize
from .regimes import AvailabilityRegime

RESULT_COLUMNS = ["dataset", "model_kind", "method", "regime", "frontier", "metric", "trial", "value"]
FRONTIER_COLUMNS = ["dataset", "model_kind", "method", "regime", "rank", "y_mean", "y_ci", "accuracy_mean",
                    "on_front", "accuracy_min", "accuracy_max"]
ALL_DATASETS = "__all__"


def write_results_csv(results, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RESULT_COLUMNS)
        for r in results:
            for rec in r.trials:
                for metric, value in rec.flat().items():
                    w.writerow([r.dataset, r.model_kind, r.method_id, r.regime.label, int(r.frontier),
                                metric, rec.trial, repr(float(value))])


def load_results_csv(path) -> list[MethodResult]:
    """Rebuild :class:`MethodResult` objects from :func:`write_results_csv` output."""
    table: dict = {}
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"results file lacks columns {sorted(missing)}")
        for row in reader:
            key = (row["dataset"], row["model_kind"], row["method"])
            if key not in table:
                table[key] = {"regime": row["regime"], "frontier": row["frontier"] == "1", "trials": defaultdict(dict)}
                order.append(key)
            table[key]["trials"][int(row["trial"])][row["metric"]] = float(row["value"])
    out = []
    for key in order:
        entry = table[key]
        res = MethodResult(key[2], AvailabilityRegime.parse(entry["regime"]), key[1], key[0], entry["frontier"])
        for t in sorted(entry["trials"]):
            flat = entry["trials"][t]
            pick = lambda prefix: {k.split(".", 1)[1]: v for k, v in flat.items() if k.startswith(prefix + ".")}
            res.trials.append(TrialRecord(t, pick("worst_group"), {k: int(v) for k, v in pick("worst_group_id").items()},
                                          pick("overall"), flat["accuracy"]))
        out.append(res)
    return out


def _by(results, *attrs):
    out = defaultdict(list)
    for r in results:
        out[tuple(getattr(r, a) for a in attrs)].append(r)
    return out


def frontier_rows(results, metric: str = "ecce_mean") -> list[dict]:
    """One row per (dataset, model kind, method), plus cross-dataset aggregates.

    Aggregate rows average the per-dataset means; their interval is the mean
    of the per-dataset standard deviations.
    """
    key = f"worst_group.{metric}"
    rows = []
    eligible = [r for r in results if r.frontier]

    def emit(dataset, kind, entries):
        # entries: (method, regime, y_mean, y_ci, acc_mean)
        front = pareto_front(ParetoPoint(m, int(reg), y) for m, reg, y, _, _ in entries)
        on = {(p.method_id, p.rank) for p in front}
        accs = [a for *_, a in entries]
        for m, reg, y, ci, acc in entries:
            rows.append({
                "dataset": dataset, "model_kind": kind, "method": m, "regime": reg.label, "rank": int(reg),
                "y_mean": y, "y_ci": ci, "accuracy_mean": acc, "on_front": int((m, int(reg)) in on),
                "accuracy_min": min(accs), "accuracy_max": max(accs),
            })

    for (dataset, kind), group in _by(eligible, "dataset", "model_kind").items():
        emit(dataset, kind, [(r.method_id, r.regime, r.mean(key), r.std(key), r.mean("accuracy")) for r in group])
    if len({r.dataset for r in eligible}) > 1:
        for (kind,), group in _by(eligible, "model_kind").items():
            entries = []
            for (m, reg), rs in _by(group, "method_id", "regime").items():
                entries.append((m, reg, float(np.mean([r.mean(key) for r in rs])),
                                float(np.mean([r.std(key) for r in rs])), float(np.mean([r.mean("accuracy") for r in rs]))))
            emit(ALL_DATASETS, kind, entries)
    return rows


def summaries(results, metric: str = "ecce_mean") -> dict:
    """:func:`summarize` output per model kind."""
    out = {}
    for (kind,), group in sorted(_by(results, "model_kind").items()):
        by_dataset = defaultdict(list)
        for r in group:
            by_dataset[r.dataset].append(r)
        out[kind] = summarize(dict(by_dataset), metric)
    return out


def _write_svg(rows, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    panels = sorted({(r["dataset"], r["model_kind"]) for r in rows})
    fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 4), squeeze=False)
    for ax, (dataset, kind) in zip(axes[0], panels):
        sub = [r for r in rows if r["dataset"] == dataset and r["model_kind"] == kind]
        x = np.array([r["rank"] for r in sub], dtype=float)
        y = np.array([r["y_mean"] for r in sub])
        ci = np.array([r["y_ci"] for r in sub])
        on = np.array([bool(r["on_front"]) for r in sub])
        ax.errorbar(x[~on], y[~on], yerr=ci[~on], fmt="o", color="0.6", label="dominated")
        ax.errorbar(x[on], y[on], yerr=ci[on], fmt="o", color="C3", label="Pareto front")
        order = np.argsort(x[on], kind="stable")
        ax.step(x[on][order], y[on][order], where="post", color="C3", alpha=0.6)
        ax.set_xticks(range(4))
        ax.set_xticklabels([AvailabilityRegime(k).label for k in range(4)], rotation=20)
        ax.set_ylabel("worst-group calibration error")
        ax.set_title(f"{dataset} / {kind}")
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def report(results, out_dir, formats=("csv", "json", "svg"), metric: str = "ecce_mean") -> list[Path]:
    """Write the requested result files into ``out_dir`` and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = list(results)
    written = []
    rows = frontier_rows(results, metric)
    if "csv" in formats:
        write_results_csv(results, out / "results.csv")
        with open(out / "frontier.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, FRONTIER_COLUMNS)
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        written += [out / "results.csv", out / "frontier.csv"]
    if "json" in formats:
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump({"metric": metric, "frontier": rows, "summaries": summaries(results, metric)}, fh, indent=2)
        written.append(out / "summary.json")
    if "svg" in formats and rows:
        _write_svg(rows, out / "frontier.svg")
        written.append(out / "frontier.svg")
    return written
