"""Calibration-error estimators and the worst-group wrapper.

Every estimator takes parallel arrays of scores in [0, 1] and binary labels
and returns a :class:`MetricValue`. Metric kinds are addressable by string id
(see :data:`METRICS`) from configs and the CLI.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricValue:
    value: float
    kind: str
    n_used: int
    aux: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return self.value


def _prep(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise MetricError(f"scores and labels differ in length ({s.size} vs {y.size})")
    if s.size == 0:
        raise MetricError("no samples")
    if np.any(s < 0) or np.any(s > 1) or not np.all(np.isfinite(s)):
        raise MetricError("scores must lie in [0, 1]")
    if not np.all((y == 0) | (y == 1)):
        raise MetricError("labels must be 0 or 1")
    return s, y


def _order(s: np.ndarray) -> np.ndarray:
    # stable: ties keep their original index order
    return np.argsort(s, kind="stable")


def _mass_bins(n: int, n_bins: int) -> np.ndarray:
    """Bin index per sorted position; leftover rows go to the highest bins."""
    q, rem = divmod(n, n_bins)
    sizes = np.full(n_bins, q)
    sizes[n_bins - rem:] += 1
    return np.repeat(np.arange(n_bins), sizes)


def _binned_gap(s, y, bin_idx, n_bins) -> float:
    n = s.size
    count = np.bincount(bin_idx, minlength=n_bins)
    sum_s = np.bincount(bin_idx, weights=s, minlength=n_bins)
    sum_y = np.bincount(bin_idx, weights=y, minlength=n_bins)
    full = count > 0
    gap = np.abs(sum_y[full] / count[full] - sum_s[full] / count[full])
    return float(np.sum(count[full] / n * gap))


def ece(scores, labels, n_bins: int = 10, scheme: str = "width") -> MetricValue:
    """Binned expected calibration error.

    ``scheme="width"`` uses M equal-width bins on [0, 1] (the last one closed);
    ``scheme="mass"`` sorts by score and cuts M contiguous chunks whose sizes
    differ by at most one. Empty bins contribute nothing.
    """
    s, y = _prep(scores, labels)
    if n_bins < 1:
        raise MetricError("n_bins must be >= 1")
    if scheme == "width":
        idx = np.minimum((s * n_bins).astype(np.int64), n_bins - 1)
        return MetricValue(_binned_gap(s, y, idx, n_bins), "ece", s.size, {"n_bins": n_bins, "scheme": scheme})
    if scheme == "mass":
        if n_bins > s.size:
            raise MetricError(f"cannot fill {n_bins} equal-mass bins with {s.size} samples")
        order = _order(s)
        value = _binned_gap(s[order], y[order], _mass_bins(s.size, n_bins), n_bins)
        return MetricValue(value, "ece", s.size, {"n_bins": n_bins, "scheme": scheme})
    raise MetricError(f"unknown binning scheme {scheme!r}")


def cumulative_process(scores, labels) -> np.ndarray:
    """Partial sums ``C_k = (1/n) sum_{i<=k} (y_(i) - s_(i))`` in score order."""
    s, y = _prep(scores, labels)
    order = _order(s)
    return np.cumsum(y[order] - s[order]) / s.size


def ecce(scores, labels, variant: str = "mean") -> MetricValue:
    """Cumulative calibration error: mean (default) or max of ``|C_k|``."""
    C = np.abs(cumulative_process(scores, labels))
    if variant == "mean":
        value = float(np.mean(C))
    elif variant == "max":
        value = float(np.max(C))
    else:
        raise MetricError(f"unknown ECCE variant {variant!r}")
    return MetricValue(value, f"ecce_{variant}", C.size)


def ecce_statistic(scores, labels) -> float:
    """Max-variant ECCE divided by ``sqrt(sum s(1-s)) / n``, for hypothesis tests.

    Under perfect calibration this is asymptotically the maximum of a Brownian
    motion's absolute value on [0, 1]. Returns ``inf`` when all scores are 0/1.
    """
    s, _ = _prep(scores, labels)
    sigma = np.sqrt(np.sum(s * (1 - s))) / s.size
    value = ecce(scores, labels, "max").value
    if sigma == 0:
        return 0.0 if value == 0 else float("inf")
    return value / sigma


def msce(scores, labels) -> MetricValue:
    """Equal-mass ECE at the largest bin count with monotone bin label means."""
    s, y = _prep(scores, labels)
    order = _order(s)
    y_sorted = np.ascontiguousarray(y[order])
    b = int(_kernels.largest_monotone_bins(y_sorted))
    value = _binned_gap(s[order], y_sorted, _mass_bins(s.size, b), b)
    return MetricValue(value, "msce", s.size, {"n_bins": b})


def _mmce_terms(s, y):
    pred = (s >= 0.5).astype(np.float64)
    correct = (pred == y).astype(np.float64)
    conf = np.maximum(s, 1.0 - s)
    return correct - conf, conf


def mmce(scores, labels, kernel_width: float = 0.4, sampled_pairs: int = 0, seed=None) -> MetricValue:
    """Kernel (maximum mean) calibration error with a Laplacian kernel.

    The exact value sums over all n^2 pairs; because the kernel is
    ``exp(-|r_i - r_j| / width)`` the sum is evaluated in O(n log n) by sorting
    confidences and carrying a decayed running sum. With ``sampled_pairs=M``
    the double sum is estimated from M uniform pairs drawn with ``seed``.
    """
    s, y = _prep(scores, labels)
    if kernel_width <= 0:
        raise MetricError("kernel_width must be positive")
    d, r = _mmce_terms(s, y)
    n = s.size
    if sampled_pairs and sampled_pairs > 0:
        if seed is None:
            raise MetricError("sampled MMCE requires a seed")
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=sampled_pairs)
        j = rng.integers(0, n, size=sampled_pairs)
        sq = float(np.mean(d[i] * d[j] * np.exp(-np.abs(r[i] - r[j]) / kernel_width)))
        aux = {"sampled_pairs": int(sampled_pairs), "kernel_width": kernel_width}
    else:
        order = np.argsort(r, kind="stable")
        total = _kernels.mmce_sorted_sum(np.ascontiguousarray(d[order]), np.ascontiguousarray(r[order]), kernel_width)
        sq = float(total) / (n * n)
        aux = {"sampled_pairs": 0, "kernel_width": kernel_width}
    aux["squared"] = sq
    return MetricValue(float(np.sqrt(max(sq, 0.0))), "mmce", n, aux)


def brier(scores, labels) -> MetricValue:
    s, y = _prep(scores, labels)
    return MetricValue(float(np.mean((s - y) ** 2)), "brier", s.size)


def accuracy(scores, labels, threshold: float = 0.5) -> MetricValue:
    s, y = _prep(scores, labels)
    if not 0 < threshold < 1:
        raise MetricError("threshold must lie in (0, 1)")
    return MetricValue(float(np.mean((s >= threshold) == (y == 1))), "accuracy", s.size, {"threshold": threshold})


METRICS: dict[str, Callable[..., MetricValue]] = {
    "ece": ece,
    "ecce_mean": lambda s, y, **kw: ecce(s, y, "mean"),
    "ecce_max": lambda s, y, **kw: ecce(s, y, "max"),
    "msce": msce,
    "mmce": mmce,
    "brier": brier,
    "accuracy": accuracy,
}


def get_metric(spec) -> Callable[..., MetricValue]:
    """Resolve a metric id (or pass a callable through)."""
    if callable(spec):
        return spec
    try:
        return METRICS[spec]
    except KeyError:
        raise MetricError(f"unknown metric {spec!r}; known: {sorted(METRICS)}") from None


def per_group(scores, labels, groups, metric="ecce_mean", n_groups: int | None = None, **kwargs) -> dict[int, MetricValue]:
    fn = get_metric(metric)
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    g = np.asarray(groups)
    ids = range(n_groups) if n_groups is not None else np.unique(g)
    out = {}
    for gid in ids:
        mask = g == gid
        if not mask.any():
            raise MetricError(f"group {gid}: no samples")
        try:
            out[int(gid)] = fn(s[mask], y[mask], **kwargs)
        except MetricError as exc:
            raise MetricError(f"group {gid}: {exc}") from exc
    return out


def worst_group(scores, labels, groups, metric="ecce_mean", n_groups: int | None = None, **kwargs) -> tuple[MetricValue, int]:
    """Maximum of ``metric`` over groups, with the arg-max group (lowest id on ties)."""
    values = per_group(scores, labels, groups, metric, n_groups, **kwargs)
    best_gid = None
    for gid in sorted(values):
        if best_gid is None or values[gid].value > values[best_gid].value:
            best_gid = gid
    return values[best_gid], best_gid
