"""Boosted trees and MLPs with calibration and group-robust objectives."""
from __future__ import annotations

import json

from .dro import group_dro_step, sample_weights, uniform_weights
from .gbt import GbtModel, GbtParams, gbt_train
from .mlp import MlpModel, MlpParams, TrainingError, mlp_train
from .tuning import SEARCH_SPACES, TuneResult, fit_model, tune


def predict(model, X, groups=None):
    """Scores in (0, 1). ``groups`` is only consulted for ``group_mode='as_feature'`` models."""
    if model.group_mode == "none":
        groups = None
    return model.predict(X, groups)


def model_from_dict(d: dict):
    if d.get("kind") == "gbt":
        return GbtModel.from_dict(d)
    if d.get("kind") == "mlp":
        return MlpModel.from_dict(d)
    raise ValueError(f"unknown model kind {d.get('kind')!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))


__all__ = [
    "GbtModel", "GbtParams", "MlpModel", "MlpParams", "SEARCH_SPACES", "TrainingError", "TuneResult",
    "fit_model", "gbt_train", "group_dro_step", "load_model", "mlp_train", "model_from_dict", "predict",
    "sample_weights", "save_model", "tune", "uniform_weights",
]
