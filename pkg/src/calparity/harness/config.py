"""Experiment configuration documents (JSON)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..data import DataError, SynthConfig, load_csv, synth_generate
from .experiment import DEFAULT_METRICS, MethodSpec, default_methods

VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class DatasetEntry:
    name: str
    path: str | None = None
    label_column: str = "y"
    group_column: str = "group"
    categorical_columns: tuple = ()
    candidate_features: tuple = ()
    synth: dict | None = None

    def load(self, base_dir: Path = Path(".")):
        if self.synth is not None:
            return synth_generate(SynthConfig.from_dict(self.synth))[0]
        path = Path(self.path)
        if not path.is_absolute():
            path = base_dir / path
        return load_csv(path, self.label_column, self.group_column, self.categorical_columns)


@dataclass
class ExperimentConfig:
    datasets: list
    methods: list
    trials: int = 3
    base_seed: int = 0
    tune_trials: int = 20
    metric_kinds: tuple = DEFAULT_METRICS
    selection_metric: str = "ecce_mean"
    base_dir: Path = field(default_factory=lambda: Path("."))


def parse_config(doc: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    """Validate an experiment document.

    Methods come from ``methods`` (a list of method specs) and/or
    ``default_methods`` (a list of model kinds whose standard roster is
    added). Datasets give either a CSV ``path`` or a ``synth`` generator
    config.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("version", VERSION) != VERSION:
        raise ConfigError(f"unsupported config version {doc.get('version')!r}")
    known = {"version", "datasets", "methods", "default_methods", "trials", "base_seed", "tune_trials",
             "metric_kinds", "selection_metric"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    try:
        datasets = []
        for d in doc.get("datasets", []):
            entry = DatasetEntry(**{**d, "categorical_columns": tuple(d.get("categorical_columns", ())),
                                    "candidate_features": tuple(d.get("candidate_features", ()))})
            if (entry.path is None) == (entry.synth is None):
                raise ConfigError(f"dataset {entry.name!r} needs exactly one of 'path' or 'synth'")
            datasets.append(entry)
        methods = [MethodSpec.from_dict(m) for m in doc.get("methods", [])]
        for kind in doc.get("default_methods", []):
            methods.extend(default_methods(kind))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not datasets:
        raise ConfigError("config lists no datasets")
    if not methods:
        raise ConfigError("config lists no methods")
    ids = [(m.model_kind, m.method_id) for m in methods]
    if len(set(ids)) != len(ids):
        raise ConfigError("method ids must be unique per model kind")
    trials = doc.get("trials", 3)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("trials must be a positive integer")
    return ExperimentConfig(datasets, methods, trials, int(doc.get("base_seed", 0)), int(doc.get("tune_trials", 20)),
                            tuple(doc.get("metric_kinds", DEFAULT_METRICS)), doc.get("selection_metric", "ecce_mean"),
                            base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, path.parent)


def load_dataset(entry: DatasetEntry, base_dir: Path):
    try:
        return entry.load(base_dir)
    except (DataError, FileNotFoundError, TypeError, ValueError) as exc:
        raise ConfigError(f"dataset {entry.name!r}: {exc}") from exc
