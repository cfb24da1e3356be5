"""Random-search hyperparameter tuning over the benchmark grids."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import metrics
from .gbt import GbtParams, gbt_train
from .mlp import MlpParams, mlp_train


@dataclass(frozen=True)
class Dim:
    values: tuple
    default: object
    loguniform: bool = False

    def sample(self, rng):
        if self.loguniform:
            lo, hi = np.log(min(self.values)), np.log(max(self.values))
            return float(np.exp(rng.uniform(lo, hi)))
        v = self.values[int(rng.integers(len(self.values)))]
        return v.item() if hasattr(v, "item") else v


_GBT = {
    "eta": Dim((0.1, 0.3, 1.0), 0.3),
    "min_split_loss": Dim((0.0, 0.1, 0.5), 0.0),
    "max_depth": Dim((4, 6, 8), 6),
    "colsample_bytree": Dim((0.7, 0.9, 1.0), 1.0),
    "colsample_bylevel": Dim((0.7, 0.9, 1.0), 1.0),
    "max_bin": Dim((128, 256, 512), 512),
    "grow_policy": Dim(("depthwise", "lossguide"), "lossguide"),
    "boosting_rounds": Dim((10, 25, 50, 100), 25),
}
_GBT_CAL = {**_GBT, "calibration_loss_weight": Dim((1e-3, 1e-2, 1e-1, 1.0, 2.0), 1e-1)}
_GBT_DRO = {**_GBT_CAL, "dro_eta": Dim((1.0, 2.0, 5.0, 10.0), 2.0)}

_MLP = {
    "layer1_units": Dim((16, 32, 64, 128, 256, 512), 128),
    "layer2_units": Dim((16, 32, 64, 128, 256, 512), 64),
    "learning_rate": Dim((1e-4, 1e-3, 1e-2), 1e-3, loguniform=True),
    "l2_regularization": Dim((1e-6, 1e-5, 1e-2), 1e-5, loguniform=True),
    "batch_size": Dim((64, 128, 512, 1024), 512),
    "num_epochs": Dim((10, 20, 30, 40, 50), 30),
}
_MLP_CAL = {**_MLP, "calibration_loss_weight": Dim((1e-3, 1e-2, 1.0), 1e-2, loguniform=True)}
_MLP_DRO = {
    **_MLP_CAL,
    "dro_eta": Dim((1e-4, 1e-3, 1.0), 1e-3, loguniform=True),
    "dro_regularization": Dim((1e-3, 1e-2, 1.0), 1e-2, loguniform=True),
}

SEARCH_SPACES: dict[str, dict[str, Dim]] = {
    "gbt": _GBT,
    "gbt_calibration": _GBT_CAL,
    "gbt_group_robust": _GBT_DRO,
    "mlp": _MLP,
    "mlp_calibration": _MLP_CAL,
    "mlp_group_robust": _MLP_DRO,
}

OBJECTIVES = ("accuracy", "overall_ecce", "worst_group_ecce")


def space_from_config(d: dict) -> dict[str, Dim]:
    """Build a search space from ``{name: {"values": [...], "default": v, "loguniform": bool}}``."""
    return {k: Dim(tuple(v["values"]), v.get("default", v["values"][0]), bool(v.get("loguniform", False)))
            for k, v in d.items()}


def default_config(space: dict[str, Dim]) -> dict:
    return {k: d.default for k, d in space.items()}


def sample_configs(space: dict[str, Dim], n_trials: int, seed: int) -> list[dict]:
    """Trial 1 is the starred default; the rest are drawn independently per dimension."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    out = [default_config(space)]
    for _ in range(n_trials - 1):
        out.append({k: d.sample(rng) for k, d in space.items()})
    return out


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


@dataclass
class TuneResult:
    best_params: dict
    best_score: float
    best_trial: int
    trials: list = field(default_factory=list)
    best_model: object = None


def fit_model(model_kind: str, params: dict, X, y, *, loss_spec: str = "bce", groups=None,
              group_mode: str = "none", n_groups: int | None = None):
    if model_kind == "gbt":
        return gbt_train(X, y, GbtParams.from_dict(params), groups=groups, group_mode=group_mode, n_groups=n_groups)
    if model_kind == "mlp":
        return mlp_train(X, y, MlpParams.from_dict(params), loss_spec=loss_spec, groups=groups,
                         group_mode=group_mode, n_groups=n_groups)
    raise ValueError(f"unknown model kind {model_kind!r}")


def _score(objective, params, scores, y_val, val_groups) -> float:
    """Lower is better."""
    if callable(objective):
        return float(objective(params, scores, y_val, val_groups))
    if objective == "accuracy":
        return -metrics.accuracy(scores, y_val).value
    if objective == "overall_ecce":
        return metrics.ecce(scores, y_val).value
    if objective == "worst_group_ecce":
        if val_groups is None:
            raise ValueError("worst_group_ecce tuning needs validation groups")
        return metrics.worst_group(scores, y_val, val_groups, "ecce_mean")[0].value
    raise ValueError(f"unknown tuning objective {objective!r}")


def tune(X_train, y_train, X_val, y_val, model_kind: str, search_space: dict | str | None = None,
         objective: str | Callable = "accuracy", n_trials: int = 20, seed: int = 0, *,
         loss_spec: str = "bce", train_groups=None, val_groups=None, group_mode: str = "none",
         n_groups: int | None = None, fixed: dict | None = None) -> TuneResult:
    """Random search: fit each trial on train, score on validation, keep the best.

    ``objective`` is one of ``accuracy`` (maximized), ``overall_ecce`` or
    ``worst_group_ecce`` (minimized), or a callable
    ``(params, val_scores, val_labels, val_groups) -> float`` to minimize.
    Ties go to the earlier trial. ``fixed`` overrides sampled values.
    """
    if search_space is None:
        search_space = model_kind
    space = SEARCH_SPACES[search_space] if isinstance(search_space, str) else search_space
    configs = sample_configs(space, n_trials, seed)
    val_group_mode_groups = val_groups if group_mode == "as_feature" else None
    best = None
    trials = []
    for t, cfg in enumerate(configs):
        cfg = {**cfg, **(fixed or {}), "seed": trial_seed(seed, t)}
        model = fit_model(model_kind, cfg, X_train, y_train, loss_spec=loss_spec, groups=train_groups,
                          group_mode=group_mode, n_groups=n_groups)
        scores = model.predict(X_val, val_group_mode_groups)
        value = _score(objective, cfg, scores, y_val, val_groups)
        trials.append({"trial": t, "params": cfg, "score": value})
        if best is None or value < best[0]:
            best = (value, t, cfg, model)
    value, t, cfg, model = best
    return TuneResult(cfg, value, t, trials, model)
