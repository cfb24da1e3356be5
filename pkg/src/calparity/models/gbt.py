"""Newton gradient boosting with an optional group-robust Brier reweighting."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import sigmoid
from . import dro
from .objectives import OBJECTIVES, brier_grad_hess
from .tree import FeatureBinner, GrowParams, Tree, _n_sample, grow_tree

log = logging.getLogger(__name__)

GROUP_MODES = ("none", "as_feature")


@dataclass(frozen=True)
class GbtParams:
    eta: float = 0.3
    min_split_loss: float = 0.0
    max_depth: int = 6
    colsample_bytree: float = 1.0
    colsample_bylevel: float = 1.0
    max_bin: int = 512
    grow_policy: str = "lossguide"
    boosting_rounds: int = 25
    objective: str = "logistic"
    calibration_loss_weight: float = 0.0
    dro_eta: float = 0.0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    max_leaves: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        for name in ("colsample_bytree", "colsample_bylevel"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.boosting_rounds < 1:
            raise ValueError("boosting_rounds must be >= 1")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.grow_policy not in ("depthwise", "lossguide"):
            raise ValueError(f"unknown grow_policy {self.grow_policy!r}")
        if self.calibration_loss_weight < 0 or self.dro_eta < 0:
            raise ValueError("calibration_loss_weight and dro_eta must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "GbtParams":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


def group_indicators(groups, n_groups: int) -> np.ndarray:
    g = np.asarray(groups, dtype=np.int64)
    if g.size and (g.min() < 0 or g.max() >= n_groups):
        raise ValueError("group id out of range")
    out = np.zeros((g.size, n_groups))
    out[np.arange(g.size), g] = 1.0
    return out


def augment(X, groups, group_mode: str, n_groups: int | None):
    if group_mode == "none":
        return np.asarray(X, dtype=np.float64)
    if group_mode != "as_feature":
        raise ValueError(f"unknown group_mode {group_mode!r}")
    if groups is None:
        raise ValueError("groups are required when group_mode='as_feature'")
    return np.hstack([np.asarray(X, dtype=np.float64), group_indicators(groups, n_groups)])


@dataclass
class GbtModel:
    trees: list[Tree]
    base_margin: float
    params: GbtParams
    n_features: int
    group_mode: str = "none"
    n_groups: int = 0
    history: dict = field(default_factory=dict)

    kind = "gbt"

    def _design(self, X, groups):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1] if X.ndim == 2 else X.shape}")
        return np.ascontiguousarray(augment(X, groups, self.group_mode, self.n_groups))

    def predict_margin(self, X, groups=None) -> np.ndarray:
        Z = self._design(X, groups)
        out = np.full(Z.shape[0], self.base_margin)
        for t in self.trees:
            out += t.predict(Z)
        return out

    def predict(self, X, groups=None) -> np.ndarray:
        return sigmoid(self.predict_margin(X, groups))

    def to_dict(self) -> dict:
        return {
            "kind": "gbt",
            "version": 1,
            "params": asdict(self.params),
            "base_margin": self.base_margin,
            "n_features": self.n_features,
            "group_mode": self.group_mode,
            "n_groups": self.n_groups,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        return cls(
            trees=[Tree.from_dict(t) for t in d["trees"]],
            base_margin=float(d["base_margin"]),
            params=GbtParams.from_dict(d["params"]),
            n_features=int(d["n_features"]),
            group_mode=d.get("group_mode", "none"),
            n_groups=int(d.get("n_groups", 0)),
        )


def _logit(p: float) -> float:
    p = min(max(p, 1e-6), 1 - 1e-6)
    return float(np.log(p / (1 - p)))


def gbt_train(X, y, params: GbtParams | None = None, groups=None, group_mode: str = "none",
              n_groups: int | None = None, sample_weight=None) -> GbtModel:
    """Fit a boosted ensemble.

    Per round the trainer evaluates gradients and hessians of the objective
    (plus ``calibration_loss_weight`` times the Brier loss) at the current
    logits and grows one tree. When both ``calibration_loss_weight`` and
    ``dro_eta`` are positive, group weights ``q`` are updated before each round
    from the per-group mean Brier loss and every sample is scaled by
    ``G * q[g]``. ``groups`` is read only in that case or for
    ``group_mode='as_feature'``.
    """
    params = params or GbtParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise ValueError("X must be (n, p) with n == len(y) > 0")
    gamma, eta_q = params.calibration_loss_weight, params.dro_eta
    use_dro = gamma > 0 and eta_q > 0
    needs_groups = use_dro or group_mode == "as_feature"
    if needs_groups:
        if groups is None:
            raise ValueError("groups are required for group-robust training or group_mode='as_feature'")
        groups = np.asarray(groups, dtype=np.int64)
        if n_groups is None:
            n_groups = int(groups.max()) + 1
    else:
        n_groups = n_groups or 0
    Z = np.ascontiguousarray(augment(X, groups, group_mode, n_groups))
    n, p = Z.shape

    base_w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    base_margin = _logit(float(np.average(y, weights=base_w)))
    margin = np.full(n, base_margin)
    loss_fn, grad_hess = OBJECTIVES[params.objective]

    binner = FeatureBinner.fit(Z, params.max_bin)
    binned = binner.transform(Z)
    if all(c.size == 0 for c in binner.cuts):
        log.warning("no feature has more than one distinct value; model will be constant")
    grow = GrowParams(
        max_depth=params.max_depth,
        min_split_loss=params.min_split_loss,
        reg_lambda=params.reg_lambda,
        min_child_weight=params.min_child_weight,
        grow_policy=params.grow_policy,
        max_leaves=params.max_leaves,
        colsample_bylevel=params.colsample_bylevel,
    )
    rng = np.random.default_rng(params.seed)
    q = dro.uniform_weights(n_groups) if use_dro else None
    history = {"train_loss": [], "q": []}
    trees = []
    for _ in range(params.boosting_rounds):
        w = base_w
        if use_dro:
            sq = (sigmoid(margin) - y) ** 2
            per_group = np.array([sq[groups == k].mean() if np.any(groups == k) else 0.0 for k in range(n_groups)])
            q = dro.group_dro_step(q, per_group, eta_q)
            w = base_w * dro.sample_weights(q, groups)
            history["q"].append(q.tolist())
        g, h = grad_hess(margin, y)
        if gamma > 0:
            gb, hb = brier_grad_hess(margin, y)
            g = g + gamma * gb
            h = h + gamma * hb
        # exact Brier hessians can be negative away from the optimum
        h = np.maximum(h, 0.0)
        g, h = g * w, h * w
        features = np.arange(p)
        if params.colsample_bytree < 1.0:
            features = np.sort(rng.choice(p, size=_n_sample(params.colsample_bytree, p), replace=False))
        tree = grow_tree(binned, binner, g, h, grow, features=features, rng=rng)
        tree.scale(params.eta)
        margin = margin + tree.predict(Z)
        trees.append(tree)
        total = loss_fn(margin, y)
        if gamma > 0:
            total = total + gamma * OBJECTIVES["brier"][0](margin, y)
        history["train_loss"].append(float(np.average(total, weights=base_w)))
    return GbtModel(trees, base_margin, params, X.shape[1], group_mode, n_groups, history)
