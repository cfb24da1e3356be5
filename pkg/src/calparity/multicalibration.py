"""Residual-driven score post-processing over score partitions.

``mc_fit`` repeatedly partitions the scores, fits a residual model inside
each partition and corrects the partition whose predicted residuals track
the observed ones most closely. Every update is recorded so ``mc_apply``
can replay the same corrections on new data without refitting.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .models.tree import Tree, fit_regression_tree

log = logging.getLogger(__name__)

EPS = 1e-6
VERSION = 1
SCHEMES = ("even", "quantile")
SAMPLINGS = ("none", "disjoint", "bootstrap")
RESIDUAL_MODELS = ("ridge", "tree")
UPDATE_RULES = ("additive_repartition", "multiplicative_fixed")


@dataclass(frozen=True)
class McConfig:
    n_partitions: int = 5
    partition_scheme: str = "even"
    sampling: str = "none"
    residual_model: str = "ridge"
    ridge_lambda: float = 1.0
    tree_max_depth: int = 3
    update_rule: str = "additive_repartition"
    step_size: float = 1.0
    stop_threshold: float = 0.1
    max_iterations: int = 20
    n_slices: int = 0  # disjoint sampling; 0 means one slice per iteration

    def __post_init__(self):
        if self.n_partitions < 1:
            raise ValueError("n_partitions must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.stop_threshold < 0:
            raise ValueError("stop_threshold must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name, allowed in (("partition_scheme", SCHEMES), ("sampling", SAMPLINGS),
                              ("residual_model", RESIDUAL_MODELS), ("update_rule", UPDATE_RULES)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "McConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown multicalibration options {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- partitions

@dataclass(frozen=True)
class PartitionSpec:
    """``even`` uses edges ``k/B``; ``quantile`` stores each bin's upper edge."""

    scheme: str
    n_partitions: int
    upper_edges: tuple = ()

    @classmethod
    def fit(cls, scores, scheme: str, n_partitions: int) -> "PartitionSpec":
        s = np.asarray(scores, dtype=np.float64)
        if scheme == "even":
            return cls("even", n_partitions)
        if scheme != "quantile":
            raise ValueError(f"unknown partition scheme {scheme!r}")
        if n_partitions > s.size:
            raise ValueError(f"cannot form {n_partitions} quantile partitions from {s.size} scores")
        srt = np.sort(s)
        ends = np.cumsum([len(c) for c in np.array_split(srt, n_partitions)])
        return cls("quantile", n_partitions, tuple(float(srt[e - 1]) for e in ends[:-1]))

    def assign(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        if self.scheme == "even":
            inner = np.arange(1, self.n_partitions) / self.n_partitions
            return np.searchsorted(inner, s, side="right")
        # a score equal to an upper edge stays in the lower bin
        return np.searchsorted(np.asarray(self.upper_edges), s, side="left")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "n_partitions": self.n_partitions, "upper_edges": list(self.upper_edges)}

    @classmethod
    def from_dict(cls, d: dict) -> "PartitionSpec":
        return cls(d["scheme"], int(d["n_partitions"]), tuple(d.get("upper_edges", ())))


def partition(scores, scheme: str = "even", n_partitions: int = 1) -> np.ndarray:
    """Partition ids in ``0..B-1``. Quantile bins hold equal counts, ties go low."""
    return PartitionSpec.fit(scores, scheme, n_partitions).assign(scores)


def miscalibration(predicted_residuals, observed_residuals) -> float:
    """Absolute Pearson correlation, or 0 when either side is constant."""
    a = np.asarray(predicted_residuals, dtype=np.float64)
    b = np.asarray(observed_residuals, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two aligned vectors of length >= 2")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.sqrt(a @ a), np.sqrt(b @ b)
    if na == 0 or nb == 0:
        return 0.0
    return float(min(abs(a @ b) / (na * nb), 1.0))


# ---------------------------------------------------------------- residual models

@dataclass(frozen=True)
class RidgeResidual:
    coef: np.ndarray
    intercept: float

    def predict(self, X):
        return X @ self.coef + self.intercept

    def to_dict(self):
        return {"type": "ridge", "coef": self.coef.tolist(), "intercept": self.intercept}


@dataclass(frozen=True)
class TreeResidual:
    tree: Tree

    def predict(self, X):
        return self.tree.predict(np.ascontiguousarray(X))

    def to_dict(self):
        return {"type": "tree", "tree": self.tree.to_dict()}


def residual_from_dict(d: dict):
    if d["type"] == "ridge":
        return RidgeResidual(np.asarray(d["coef"], dtype=np.float64), float(d["intercept"]))
    if d["type"] == "tree":
        return TreeResidual(Tree.from_dict(d["tree"]))
    raise ValueError(f"unknown residual model {d['type']!r}")


def fit_ridge(X, r, lam: float) -> RidgeResidual:
    mx, mr = X.mean(axis=0), r.mean()
    Xc = X - mx
    coef = np.linalg.solve(Xc.T @ Xc + lam * np.eye(X.shape[1]), Xc.T @ (r - mr))
    return RidgeResidual(coef, float(mr - mx @ coef))


def _fit_residual(config: McConfig, X, r):
    if config.residual_model == "ridge":
        return fit_ridge(X, r, config.ridge_lambda)
    return TreeResidual(fit_regression_tree(X, r, max_depth=config.tree_max_depth))


# ---------------------------------------------------------------- fit / apply

@dataclass
class McStep:
    iteration: int
    spec: PartitionSpec
    partition_id: int
    model: object
    update_rule: str
    step_size: float
    max_miscalibration: float


@dataclass
class UpdateSequence:
    config: McConfig
    n_features: int
    initial_spec: PartitionSpec | None = None
    steps: list = field(default_factory=list)
    terminal_reason: str = "max_iter"
    witnesses: list = field(default_factory=list)
    final_scores: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "version": VERSION,
            "config": asdict(self.config),
            "n_features": self.n_features,
            "initial_spec": None if self.initial_spec is None else self.initial_spec.to_dict(),
            "terminal_reason": self.terminal_reason,
            "witnesses": list(self.witnesses),
            "steps": [{
                "iteration": st.iteration, "spec": st.spec.to_dict(), "partition_id": st.partition_id,
                "model": st.model.to_dict(), "update_rule": st.update_rule, "step_size": st.step_size,
                "max_miscalibration": st.max_miscalibration,
            } for st in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UpdateSequence":
        if d.get("version") != VERSION:
            raise ValueError(f"unsupported update-sequence version {d.get('version')!r}")
        steps = [McStep(int(st["iteration"]), PartitionSpec.from_dict(st["spec"]), int(st["partition_id"]),
                        residual_from_dict(st["model"]), st["update_rule"], float(st["step_size"]),
                        float(st["max_miscalibration"])) for st in d["steps"]]
        init = d.get("initial_spec")
        return cls(McConfig.from_dict(d["config"]), int(d["n_features"]),
                   None if init is None else PartitionSpec.from_dict(init), steps,
                   d["terminal_reason"], list(d.get("witnesses", [])))


def _update(s, rows, delta, rule, step):
    if rule == "additive_repartition":
        new = s[rows] + step * delta
    else:
        new = s[rows] * np.exp(step * delta)
    s[rows] = np.clip(new, EPS, 1 - EPS)


def _working_rows(config: McConfig, it: int, n: int, slices, rng):
    if config.sampling == "none":
        return np.arange(n)
    if config.sampling == "bootstrap":
        return np.sort(rng.integers(0, n, size=n))
    if it >= len(slices) and it == len(slices):
        log.info("disjoint sampling ran out of slices after %d iterations; wrapping around", it)
    return slices[it % len(slices)]


def _check(scores, features, labels=None):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    X = np.asarray(features, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != s.size:
        raise ValueError("scores and features differ in length")
    if labels is None:
        return s, X
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.size != s.size:
        raise ValueError("scores and labels differ in length")
    return s, X, y


def mc_fit(scores, features, labels, config: McConfig | None = None, seed: int = 0) -> UpdateSequence:
    config = config or McConfig()
    s, X, y = _check(scores, features, labels)
    n = s.size
    s = np.clip(s, EPS, 1 - EPS)
    rng = np.random.default_rng(seed)
    slices = None
    if config.sampling == "disjoint":
        k = config.n_slices or config.max_iterations
        slices = [np.sort(c) for c in np.array_split(rng.permutation(n), min(k, n))]
    fixed = config.update_rule == "multiplicative_fixed"
    seq = UpdateSequence(config, X.shape[1])
    fixed_assign = None
    if fixed:
        seq.initial_spec = PartitionSpec.fit(s, config.partition_scheme, config.n_partitions)
        fixed_assign = seq.initial_spec.assign(s)

    for it in range(config.max_iterations):
        rows = _working_rows(config, it, n, slices, rng)
        if fixed:
            spec, assign = seq.initial_spec, fixed_assign
        else:
            spec = PartitionSpec.fit(s[rows], config.partition_scheme, config.n_partitions)
            assign = spec.assign(s)
        work_assign = assign[rows]
        best = (-1.0, -1, None)
        for k in range(config.n_partitions):
            member = rows[work_assign == k]
            if member.size < 2:
                continue
            observed = y[member] - s[member]
            model = _fit_residual(config, X[member], observed)
            value = miscalibration(model.predict(X[member]), observed)
            if value > best[0]:
                best = (value, k, model)
        value, k, model = best
        value = max(value, 0.0)
        seq.witnesses.append(value)
        if model is None or value < config.stop_threshold:
            seq.terminal_reason = "threshold"
            break
        target = np.flatnonzero(assign == k)
        _update(s, target, model.predict(X[target]), config.update_rule, config.step_size)
        seq.steps.append(McStep(it, spec, k, model, config.update_rule, config.step_size, value))
    seq.final_scores = s.copy()
    return seq


def mc_apply(sequence: UpdateSequence, scores, features) -> np.ndarray:
    """Replay recorded updates on new data."""
    s, X = _check(scores, features)
    if X.shape[1] != sequence.n_features:
        raise ValueError(f"expected {sequence.n_features} features, got {X.shape[1]}")
    s = np.clip(s, EPS, 1 - EPS)
    fixed_assign = sequence.initial_spec.assign(s) if sequence.initial_spec is not None else None
    for st in sequence.steps:
        assign = fixed_assign if st.update_rule == "multiplicative_fixed" else st.spec.assign(s)
        target = np.flatnonzero(assign == st.partition_id)
        _update(s, target, st.model.predict(X[target]), st.update_rule, st.step_size)
    return s


# ---------------------------------------------------------------- selection

CANDIDATE_GRID = {
    "n_partitions": (1, 2, 5, 10),
    "partition_scheme": SCHEMES,
    "sampling": SAMPLINGS,
    "residual_model": RESIDUAL_MODELS,
    "update_rule": UPDATE_RULES,
    "step_size": (0.25, 0.5, 1.0),
    "stop_threshold": (0.01, 0.05, 0.1),
    "max_iterations": (5, 10, 20),
}


def default_candidates(n_candidates: int = 20, seed: int = 0) -> list[McConfig]:
    """The default configuration followed by random draws from :data:`CANDIDATE_GRID`."""
    rng = np.random.default_rng(seed)
    out = [McConfig()]
    while len(out) < n_candidates:
        d = {k: v[int(rng.integers(len(v)))] for k, v in CANDIDATE_GRID.items()}
        out.append(McConfig(**{k: (v.item() if hasattr(v, "item") else v) for k, v in d.items()}))
    return out[:n_candidates]


def mc_select(scores, features, labels, candidate_configs=None, seed: int = 0, *,
              selection: str = "overall_ecce", groups=None) -> tuple[McConfig, UpdateSequence]:
    """Fit each candidate on a seeded 70% split and keep the one with the lowest held-out ECCE.

    ``selection='worst_group_ecce'`` scores by worst-group ECCE instead and
    needs ``groups``. Ties keep the earlier candidate. The returned sequence
    is the one fitted on the 70% part.
    """
    s, X, y = _check(scores, features, labels)
    candidates = list(candidate_configs) if candidate_configs is not None else default_candidates(seed=seed)
    if not candidates:
        raise ValueError("no candidate configurations")
    candidates = [c if isinstance(c, McConfig) else McConfig.from_dict(c) for c in candidates]
    if len(candidates) == 1:
        return candidates[0], mc_fit(s, X, y, candidates[0], seed)
    if selection == "worst_group_ecce" and groups is None:
        raise ValueError("worst_group_ecce selection needs groups")
    perm = np.random.default_rng(seed).permutation(s.size)
    cut = int(round(0.7 * s.size))
    fit_idx, hold_idx = np.sort(perm[:cut]), np.sort(perm[cut:])
    if hold_idx.size == 0 or fit_idx.size == 0:
        raise ValueError("too few samples for a 70/30 selection split")
    best = None
    for cfg in candidates:
        seq = mc_fit(s[fit_idx], X[fit_idx], y[fit_idx], cfg, seed)
        out = mc_apply(seq, s[hold_idx], X[hold_idx])
        if selection == "overall_ecce":
            value = metrics.ecce(out, y[hold_idx]).value
        elif selection == "worst_group_ecce":
            value = metrics.worst_group(out, y[hold_idx], np.asarray(groups)[hold_idx])[0].value
        else:
            raise ValueError(f"unknown selection metric {selection!r}")
        if best is None or value < best[0]:
            best = (value, cfg, seq)
    return best[1], best[2]
