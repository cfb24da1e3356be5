"""The benchmark protocol: split, tune, intervene, evaluate, repeat."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import metrics
from ..calibrators import KINDS as CALIBRATOR_KINDS, fit_calibrator, fit_group_robust, fit_per_group
from ..data import Dataset, split
from ..models import tune
from ..multicalibration import default_candidates, mc_apply, mc_select
from ..attribution import select_feature
from .regimes import EVALUATION, PERMITTED, AvailabilityRegime, GroupAccess, RegimeViolation, minimal_regime

log = logging.getLogger(__name__)

DEFAULT_METRICS = ("ecce_mean", "msce", "mmce")

# stages at which each intervention reads group ids, beyond what tuning needs
INTERVENTION_STAGES = {
    "none": set(),
    "group_feature": {"train", "val", "inference"},
    "calibrator": set(),
    "per_group_calibrator": {"val", "inference"},
    "group_robust_calibrator": {"val"},
    "calibration_loss": set(),
    "group_robust_training": {"train"},
    "multicalibration": set(),
    "qpd_feature": {"val"},
    "all_features": set(),
}
INTERVENTIONS = tuple(INTERVENTION_STAGES)
OBJECTIVES = ("accuracy", "overall_ecce", "worst_group_ecce")


class ComponentError(RuntimeError):
    pass


@dataclass(frozen=True)
class MethodSpec:
    """One benchmarked method.

    ``search_space`` names a tuning grid (defaults follow the intervention)
    or is an explicit space dict. ``fixed`` pins hyperparameters during
    tuning. ``frontier=False`` keeps a method out of Pareto analysis.
    """

    method_id: str
    regime: AvailabilityRegime
    model_kind: str = "gbt"
    intervention: str = "none"
    objective: str = "accuracy"
    calibrator: str | None = None
    calibrator_params: dict = field(default_factory=dict)
    search_space: object = None
    fixed: dict = field(default_factory=dict)
    mc_candidates: int = 20
    frontier: bool = True

    def __post_init__(self):
        object.__setattr__(self, "regime", AvailabilityRegime.parse(self.regime))
        if self.model_kind not in ("gbt", "mlp"):
            raise ValueError(f"{self.method_id}: unknown model kind {self.model_kind!r}")
        if self.intervention not in INTERVENTION_STAGES:
            raise ValueError(f"{self.method_id}: unknown intervention {self.intervention!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"{self.method_id}: unknown tuning objective {self.objective!r}")
        if self.intervention == "calibrator" and not self.calibrator:
            raise ValueError(f"{self.method_id}: calibrator methods need a calibrator kind")
        if self.calibrator is not None and self.calibrator not in CALIBRATOR_KINDS:
            raise ValueError(f"{self.method_id}: unsupported calibrator kind {self.calibrator!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown method fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "method_id": self.method_id, "regime": self.regime.label, "model_kind": self.model_kind,
            "intervention": self.intervention, "objective": self.objective, "calibrator": self.calibrator,
            "calibrator_params": dict(self.calibrator_params), "search_space": self.search_space,
            "fixed": dict(self.fixed), "mc_candidates": self.mc_candidates, "frontier": self.frontier,
        }

    def required_stages(self) -> set:
        stages = set(INTERVENTION_STAGES[self.intervention])
        if self.objective == "worst_group_ecce":
            stages.add("val")
        return stages


def check_spec(spec: MethodSpec) -> None:
    """Raise :class:`RegimeViolation` if a method spec reads groups its regime forbids."""
    needed = spec.required_stages()
    extra = needed - PERMITTED[spec.regime]
    if extra:
        raise RegimeViolation(
            f"method {spec.method_id!r} is declared {spec.regime.label} but reads group data at "
            f"{sorted(extra)}; it needs at least {minimal_regime(needed).label}")


def default_methods(model_kind: str = "gbt") -> list[MethodSpec]:
    """The benchmark roster for one model kind, ordered by regime."""
    R = AvailabilityRegime
    k = model_kind
    out = [
        MethodSpec("use_group", R.TRAIN_VAL_INF, k, "group_feature", "worst_group_ecce"),
        MethodSpec("per_group_calibrator", R.TRAIN_VAL_INF, k, "per_group_calibrator", calibrator="isotonic"),
        MethodSpec("group_robust_training", R.TRAIN_VAL, k, "group_robust_training", "worst_group_ecce"),
        MethodSpec("tune_for_worst_group", R.VAL, k, "none", "worst_group_ecce"),
        MethodSpec("group_robust_calibrator", R.VAL, k, "group_robust_calibrator"),
        MethodSpec("tune_for_accuracy", R.NONE, k, "none", "accuracy"),
        MethodSpec("tune_for_ece", R.NONE, k, "none", "overall_ecce"),
        MethodSpec("calibration_loss", R.NONE, k, "calibration_loss", "overall_ecce"),
        MethodSpec("multicalibration", R.NONE, k, "multicalibration"),
    ]
    for cal in ("histogram", "isotonic", "bbq", "platt", "beta", "temperature", "platt_binner"):
        out.append(MethodSpec(f"{cal}_calibrator", R.NONE, k, "calibrator", calibrator=cal))
    return out


# ---------------------------------------------------------------- results

@dataclass
class TrialRecord:
    trial: int
    worst_group: dict
    worst_group_id: dict
    overall: dict
    accuracy: float

    def flat(self) -> dict:
        out = {f"worst_group.{k}": v for k, v in self.worst_group.items()}
        out.update({f"worst_group_id.{k}": float(v) for k, v in self.worst_group_id.items()})
        out.update({f"overall.{k}": v for k, v in self.overall.items()})
        out["accuracy"] = self.accuracy
        return out


@dataclass
class MethodResult:
    method_id: str
    regime: AvailabilityRegime
    model_kind: str
    dataset: str = "dataset"
    frontier: bool = True
    trials: list = field(default_factory=list)

    def values(self, key: str) -> np.ndarray:
        return np.array([t.flat()[key] for t in self.trials], dtype=np.float64)

    def mean(self, key: str) -> float:
        return float(self.values(key).mean())

    def std(self, key: str) -> float:
        v = self.values(key)
        return float(v.std(ddof=1)) if v.size > 1 else 0.0

    def aggregates(self) -> dict:
        keys = self.trials[0].flat().keys() if self.trials else ()
        return {k: {"mean": self.mean(k), "std": self.std(k)} for k in keys}


# ---------------------------------------------------------------- running

class _Trial:
    """Partitions of one trial plus a per-trial cache of tuned base models."""

    def __init__(self, dataset: Dataset, seed: int, candidate_features):
        self.seed = seed
        sp = split(dataset, seed=seed)
        self.train, self.val, self.test = dataset.take(sp.train), dataset.take(sp.val), dataset.take(sp.test)
        self.groups = {"train": self.train.groups, "val": self.val.groups,
                       "inference": self.test.groups, EVALUATION: self.test.groups}
        self.candidates = tuple(candidate_features)
        self.base_names = [f for f in dataset.feature_names if f not in self.candidates]
        self.cache: dict = {}


def _columns(ds: Dataset, names) -> np.ndarray:
    idx = [ds.feature_names.index(f) for f in names]
    return np.ascontiguousarray(ds.features[:, idx])


def _space_for(spec: MethodSpec) -> object:
    if spec.search_space is not None:
        return spec.search_space
    if spec.intervention == "calibration_loss":
        return f"{spec.model_kind}_calibration"
    if spec.intervention == "group_robust_training":
        return f"{spec.model_kind}_group_robust"
    return spec.model_kind


def _loss_for(spec: MethodSpec) -> str:
    if spec.model_kind != "mlp":
        return "bce"
    return {"calibration_loss": "bce_mmce", "group_robust_training": "group_dro"}.get(spec.intervention, "bce")


def _tuned_model(ctx: _Trial, access: GroupAccess, spec: MethodSpec, feature_names, objective: str,
                 tune_trials: int):
    group_mode = "as_feature" if spec.intervention == "group_feature" else "none"
    train_groups = access.groups("train") if spec.intervention in ("group_feature", "group_robust_training") else None
    val_groups = access.groups("val") if objective == "worst_group_ecce" or group_mode == "as_feature" else None
    space = _space_for(spec)
    loss = _loss_for(spec)
    fixed = dict(spec.fixed)
    key = (spec.model_kind, json.dumps(space, sort_keys=True, default=str), objective, loss, group_mode,
           tuple(feature_names), json.dumps(fixed, sort_keys=True), tune_trials)
    if key not in ctx.cache:
        G = int(max(ctx.train.groups.max(), ctx.val.groups.max(), ctx.test.groups.max())) + 1
        result = tune(
            _columns(ctx.train, feature_names), ctx.train.labels, _columns(ctx.val, feature_names), ctx.val.labels,
            spec.model_kind, space, objective, tune_trials, ctx.seed, loss_spec=loss,
            train_groups=train_groups, val_groups=val_groups, group_mode=group_mode, n_groups=G, fixed=fixed)
        ctx.cache[key] = result.best_model
    return ctx.cache[key]


def _scores(model, ds: Dataset, feature_names, groups=None) -> np.ndarray:
    return model.predict(_columns(ds, feature_names), groups)


def _run_method(ctx: _Trial, spec: MethodSpec, access: GroupAccess, tune_trials: int) -> np.ndarray:
    """Test-set scores for one method in one trial."""
    names = ctx.base_names
    iv = spec.intervention
    if iv == "all_features":
        names = ctx.base_names + list(ctx.candidates)
    if iv == "qpd_feature":
        if not ctx.candidates:
            raise ValueError("qpd_feature needs candidate features")
        base = _tuned_model(ctx, access, replace(spec, intervention="none"), names, "accuracy", tune_trials)
        val_scores = _scores(base, ctx.val, names)
        ranking = select_feature(val_scores, ctx.candidates, ctx.val.labels, access.groups("val"), ctx.val,
                                 k=1, seed=ctx.seed)
        names = names + ranking.ranking[:1]
        model = _tuned_model(ctx, access, replace(spec, intervention="none"), names, spec.objective, tune_trials)
        return _scores(model, ctx.test, names)

    objective = spec.objective
    model = _tuned_model(ctx, access, spec, names, objective, tune_trials)
    if iv == "group_feature":
        return _scores(model, ctx.test, names, access.groups("inference"))
    test_scores = _scores(model, ctx.test, names)
    if iv in ("none", "calibration_loss", "group_robust_training", "all_features"):
        return test_scores
    val_scores = _scores(model, ctx.val, names)
    if iv == "calibrator":
        cal = fit_calibrator(spec.calibrator, val_scores, ctx.val.labels, **spec.calibrator_params)
        return cal.apply(test_scores)
    if iv == "per_group_calibrator":
        cal = fit_per_group(val_scores, ctx.val.labels, access.groups("val"), spec.calibrator or "isotonic",
                            spec.calibrator_params or None)
        return cal.apply(test_scores, access.groups("inference"))
    if iv == "group_robust_calibrator":
        cal = fit_group_robust(val_scores, ctx.val.labels, access.groups("val"), **spec.calibrator_params)
        return cal.apply(test_scores)
    if iv == "multicalibration":
        candidates = default_candidates(spec.mc_candidates, ctx.seed)
        _, seq = mc_select(val_scores, _columns(ctx.val, names), ctx.val.labels, candidates, ctx.seed)
        return mc_apply(seq, test_scores, _columns(ctx.test, names))
    raise AssertionError(iv)


def evaluate(scores, labels, groups, metric_kinds=DEFAULT_METRICS, trial: int = 0) -> TrialRecord:
    worst, worst_id, overall = {}, {}, {}
    for kind in metric_kinds:
        value, gid = metrics.worst_group(scores, labels, groups, kind)
        worst[kind], worst_id[kind] = value.value, gid
        overall[kind] = metrics.get_metric(kind)(scores, labels).value
    return TrialRecord(trial, worst, worst_id, overall, metrics.accuracy(scores, labels).value)


def run_experiment(dataset: Dataset, method_specs, trials: int = 3, base_seed: int = 0, *,
                   tune_trials: int = 20, metric_kinds=DEFAULT_METRICS, candidate_features=(),
                   dataset_name: str = "dataset", static_check: bool = True, audit_log: list | None = None
                   ) -> list[MethodResult]:
    """Run every method for ``trials`` seeded splits and evaluate on the test part.

    Trial ``t`` splits with seed ``base_seed + t``. Base models with the same
    tuning setup are tuned once per trial and shared. Group ids reach a
    method only through a :class:`GroupAccess` bound to its declared regime,
    so an out-of-regime read raises :class:`RegimeViolation` even when the
    static check is skipped.
    """
    specs = [s if isinstance(s, MethodSpec) else MethodSpec.from_dict(s) for s in method_specs]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if static_check:
        for spec in specs:
            check_spec(spec)
    results = [MethodResult(s.method_id, s.regime, s.model_kind, dataset_name, s.frontier) for s in specs]
    for t in range(trials):
        ctx = _Trial(dataset, base_seed + t, candidate_features)
        for spec, res in zip(specs, results):
            access = GroupAccess(spec.regime, ctx.groups, spec.method_id)
            try:
                scores = _run_method(ctx, spec, access, tune_trials)
            except RegimeViolation:
                raise
            except Exception as exc:
                raise ComponentError(f"method {spec.method_id!r}, trial {t}: {exc}") from exc
            record = evaluate(scores, ctx.test.labels, access.groups(EVALUATION), metric_kinds, t)
            res.trials.append(record)
            if audit_log is not None:
                audit_log.append({"dataset": dataset_name, "method": spec.method_id, "trial": t,
                                  "stages": sorted(access.stages_read - {EVALUATION})})
            log.info("%s trial %d: worst-group %s", spec.method_id, t, record.worst_group)
    return results
