"""Quantile parity differences and attribution-guided feature selection.

Attributions are interventional Shapley values against a single reference
point: a feature left out of a coalition takes the reference value. For
boosted trees they are computed exactly leaf by leaf, so both methods give
identical numbers and both satisfy ``sum(phi) == f(x) - f(reference)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .models.gbt import GbtModel, GbtParams, gbt_train
from .multicalibration import partition

MAX_EXACT_FEATURES = 15
METHODS = ("exact_shapley", "tree_path")


class AttributionError(ValueError):
    pass


def _members(groups, which) -> np.ndarray:
    g = np.asarray(groups)
    return np.isin(g, np.atleast_1d(which))


def _bin_mask(n, in_bin):
    if in_bin is None:
        return np.ones(n, dtype=bool)
    return np.asarray(in_bin, dtype=bool)


def _mean_diff(values, groups, in_bin, i, j) -> float:
    v = np.asarray(values, dtype=np.float64)
    mask = _bin_mask(v.size, in_bin)
    a, b = mask & _members(groups, i), mask & _members(groups, j)
    if not a.any() or not b.any():
        raise AttributionError("bin lacks members of one of the compared groups")
    return float(v[a].mean() - v[b].mean())


def qdd(scores, groups, in_bin, i, j) -> float:
    """Mean score of group ``i`` minus mean score of group ``j`` inside the bin.

    ``i`` and ``j`` may be single ids or collections of ids; ``in_bin`` is a
    boolean mask (``None`` means every row).
    """
    return _mean_diff(scores, groups, in_bin, i, j)


def qpd(labels, groups, in_bin, i, j) -> float:
    """Outcome-rate difference between groups ``i`` and ``j`` inside the bin."""
    return _mean_diff(labels, groups, in_bin, i, j)


# ---------------------------------------------------------------- attribution

@dataclass(frozen=True)
class AttributionVector:
    values: np.ndarray
    baseline_value: float
    output_value: float

    @property
    def residual(self) -> float:
        return float(self.values.sum() - (self.output_value - self.baseline_value))


def _value_fn(model, output: str):
    if isinstance(model, GbtModel):
        if model.group_mode != "none":
            raise AttributionError("attribute a group-as-feature model through its augmented design instead")
        return model.predict_margin if output == "margin" else model.predict
    if callable(model):
        return model
    raise AttributionError("model must be a GbtModel or a callable on (n, p) arrays")


def _shapley_weights(p: int) -> np.ndarray:
    return np.array([math.factorial(k) * math.factorial(p - k - 1) / math.factorial(p) for k in range(p)])


def exact_shapley(fn, X, reference) -> np.ndarray:
    """Shapley values by enumerating every coalition; ``X`` is ``(n, p)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ref = np.asarray(reference, dtype=np.float64)
    n, p = X.shape
    if p > MAX_EXACT_FEATURES:
        raise AttributionError(f"exact Shapley enumeration is limited to {MAX_EXACT_FEATURES} features, got {p}")
    masks = np.arange(1 << p)
    on = ((masks[:, None] >> np.arange(p)) & 1).astype(bool)
    sizes = on.sum(axis=1)
    weights = _shapley_weights(p)
    phi = np.zeros((n, p))
    for r in range(n):
        hybrid = np.where(on, X[r], ref)
        v = np.asarray(fn(hybrid), dtype=np.float64)
        for f in range(p):
            without = masks[~on[:, f]]
            phi[r, f] = np.sum(weights[sizes[without]] * (v[without | (1 << f)] - v[without]))
    return phi


def tree_shapley(model: GbtModel, X, reference) -> np.ndarray:
    """Exact interventional Shapley values of the margin, one leaf at a time.

    A leaf is reached by a hybrid point iff every feature that only ``x``
    routes correctly (set ``A``) comes from ``x`` and every feature that only
    the reference routes correctly (set ``B``) comes from the reference. That
    indicator game has the closed-form values ``v (a-1)! b! / (a+b)!`` on
    ``A`` and ``-v a! (b-1)! / (a+b)!`` on ``B``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ref = np.asarray(reference, dtype=np.float64)
    n, p = X.shape
    fact = np.array([math.factorial(k) for k in range(2 * p + 2)], dtype=np.float64)
    phi = np.zeros((n, p))
    for tree in model.trees:
        for value, path in tree.leaf_paths():
            if value == 0.0:
                continue
            x_ok = {}
            r_ok = {}
            for f, thr, went_left in path:
                xs = (X[:, f] < thr) == went_left
                rs = bool((ref[f] < thr) == went_left)
                x_ok[f] = x_ok.get(f, True) & xs
                r_ok[f] = r_ok.get(f, True) and rs
            feats = sorted(x_ok)
            xm = np.column_stack([np.broadcast_to(x_ok[f], (n,)) for f in feats]) if feats else np.ones((n, 0), bool)
            rm = np.array([r_ok[f] for f in feats], dtype=bool)
            in_a = xm & ~rm
            in_b = ~xm & rm
            reachable = ~np.any(~xm & ~rm, axis=1)
            a = in_a.sum(axis=1)
            b = in_b.sum(axis=1)
            live = reachable & (a + b > 0)
            if not live.any():
                continue
            a_, b_ = a[live], b[live]
            wa = value * fact[np.maximum(a_ - 1, 0)] * fact[b_] / fact[a_ + b_]
            wb = -value * fact[a_] * fact[np.maximum(b_ - 1, 0)] / fact[a_ + b_]
            cols = np.asarray(feats)
            phi[np.ix_(live, cols)] += in_a[live] * wa[:, None] + in_b[live] * wb[:, None]
    return phi


def attribute_many(model, X, baseline=None, method: str = "exact_shapley", output: str = "margin") -> np.ndarray:
    """Attribution rows for every instance in ``X``; ``baseline`` defaults to the column means of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    ref = X.mean(axis=0) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if ref.shape != (X.shape[1],):
        raise AttributionError("baseline width does not match the instances")
    if method == "exact_shapley":
        return exact_shapley(_value_fn(model, output), X, ref)
    if method == "tree_path":
        if not isinstance(model, GbtModel):
            raise AttributionError("tree_path attribution needs a boosted-tree model")
        if output != "margin":
            raise AttributionError("tree_path attributes the margin only")
        _value_fn(model, output)
        return tree_shapley(model, X, ref)
    raise AttributionError(f"unknown attribution method {method!r}")


def attribute(model, instance, baseline, method: str = "exact_shapley", output: str = "margin") -> AttributionVector:
    x = np.asarray(instance, dtype=np.float64).reshape(1, -1)
    ref = np.asarray(baseline, dtype=np.float64).reshape(1, -1)
    phi = attribute_many(model, x, ref[0], method, output)[0]
    fn = _value_fn(model, output)
    return AttributionVector(phi, float(np.asarray(fn(ref))[0]), float(np.asarray(fn(x))[0]))


# ---------------------------------------------------------------- QPD report

@dataclass
class QpdReport:
    feature_names: list
    group_i: tuple
    group_j: tuple
    bins: list
    counts: list
    qpd: list
    qdd: list
    qpda: np.ndarray  # bins x features
    proxy_gap: list  # mean proxy output difference per bin
    bin_edges: list = field(default_factory=list)  # (lowest, highest) score per bin

    @property
    def identity_residual(self) -> np.ndarray:
        return self.qpda.sum(axis=1) - np.asarray(self.proxy_gap)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names), "group_i": list(self.group_i), "group_j": list(self.group_j),
            "bins": list(self.bins), "counts": list(self.counts), "qpd": list(self.qpd), "qdd": list(self.qdd),
            "qpda": self.qpda.tolist(), "proxy_gap": list(self.proxy_gap), "bin_edges": list(self.bin_edges),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin", "count", "qpd", "qdd", *self.feature_names])
            for r, b in enumerate(self.bins):
                w.writerow([b, self.counts[r], repr(self.qpd[r]), repr(self.qdd[r]), *map(repr, self.qpda[r].tolist())])


def qpd_attribution(proxy_model, dataset, bin_assignments, i, j, method: str = "tree_path",
                    baseline=None, scores=None, output: str = "margin") -> QpdReport:
    """Per-bin group differences of outcome, score and per-feature attribution.

    Bins missing either group are skipped. ``scores`` feeds the score
    difference (the proxy output is used when omitted). The attribution
    differences of a bin sum to that bin's mean proxy-output gap.
    """
    X, y, g = dataset.features, dataset.labels, dataset.groups
    bins_of = np.asarray(bin_assignments)
    if bins_of.shape != y.shape:
        raise AttributionError("bin assignments must align with the dataset rows")
    ref = X.mean(axis=0) if baseline is None else np.asarray(baseline, dtype=np.float64)
    phi = attribute_many(proxy_model, X, ref, method, output)
    out = np.asarray(_value_fn(proxy_model, output)(X), dtype=np.float64)
    s = out if scores is None else np.asarray(scores, dtype=np.float64)
    in_i, in_j = _members(g, i), _members(g, j)
    rows = {"bins": [], "counts": [], "qpd": [], "qdd": [], "qpda": [], "gap": [], "edges": []}
    for b in np.unique(bins_of):
        mask = bins_of == b
        if not (mask & in_i).any() or not (mask & in_j).any():
            continue
        rows["bins"].append(int(b))
        rows["counts"].append(int(mask.sum()))
        rows["qpd"].append(qpd(y, g, mask, i, j))
        rows["qdd"].append(qdd(s, g, mask, i, j))
        rows["qpda"].append(phi[mask & in_i].mean(axis=0) - phi[mask & in_j].mean(axis=0))
        rows["gap"].append(float(out[mask & in_i].mean() - out[mask & in_j].mean()))
        rows["edges"].append((float(s[mask].min()), float(s[mask].max())))
    qpda = np.array(rows["qpda"]).reshape(len(rows["bins"]), X.shape[1])
    return QpdReport(list(dataset.feature_names), tuple(np.atleast_1d(i).tolist()), tuple(np.atleast_1d(j).tolist()),
                     rows["bins"], rows["counts"], rows["qpd"], rows["qdd"], qpda, rows["gap"], rows["edges"])


# ---------------------------------------------------------------- selection

@dataclass
class FeatureRanking:
    ranking: list
    scores: dict
    worst_groups: tuple
    other_groups: tuple
    report: QpdReport | None = None


PROXY_DEFAULTS = {"max_depth": 4, "boosting_rounds": 50, "eta": 0.3, "max_bin": 256, "grow_policy": "depthwise"}


def split_groups_by_calibration(scores, labels, groups, metric: str = "ecce_mean") -> tuple[tuple, tuple]:
    """Worst ``ceil(G/2)`` groups by per-group calibration error, and the rest."""
    per = metrics.per_group(scores, labels, groups, metric)
    order = sorted(per, key=lambda k: (-per[k].value, k))
    if len(order) < 2:
        raise AttributionError("at least two groups are needed for a group comparison")
    cut = math.ceil(len(order) / 2)
    return tuple(sorted(order[:cut])), tuple(sorted(order[cut:]))


def select_feature(base_scores, candidate_features, labels, groups, dataset, k: int = 1, n_bins: int = 10,
                   proxy_params: dict | None = None, method: str = "tree_path", seed: int = 0) -> FeatureRanking:
    """Rank candidate features by count-weighted absolute attribution gap.

    The proxy is a boosted-tree model fit on every column of ``dataset``
    (base and candidate features) against ``labels``. Bins are equal-count
    quantiles of ``base_scores``.
    """
    names = list(dataset.feature_names)
    candidates = list(candidate_features)
    if not candidates:
        raise AttributionError("no candidate features")
    missing = [c for c in candidates if c not in names]
    if missing:
        raise AttributionError(f"candidate features not in dataset: {missing}")
    s = np.asarray(base_scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    g = np.asarray(groups, dtype=np.int64)
    worst, rest = split_groups_by_calibration(s, y, g)
    params = GbtParams.from_dict({**PROXY_DEFAULTS, **(proxy_params or {}), "seed": seed})
    try:
        proxy = gbt_train(dataset.features, y, params)
    except Exception as exc:
        raise AttributionError(f"proxy training failed: {exc}") from exc
    if not np.array_equal(dataset.groups, g):
        raise AttributionError("groups must match the dataset's group column")
    bins = partition(s, "quantile", min(n_bins, s.size))
    report = qpd_attribution(proxy, dataset, bins, worst, rest, method, scores=s)
    weights = np.asarray(report.counts, dtype=np.float64)
    agg = (weights[:, None] * np.abs(report.qpda)).sum(axis=0) / max(weights.sum(), 1.0)
    scores = {c: float(agg[names.index(c)]) for c in candidates}
    ranking = sorted(candidates, key=lambda c: -scores[c])  # stable: ties keep candidate order
    return FeatureRanking(ranking[:k], scores, worst, rest, report)
