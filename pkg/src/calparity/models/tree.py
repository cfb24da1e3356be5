"""Histogram-based second-order regression trees.

Features are quantized once per model into at most ``max_bin`` quantile bins;
trees are grown on gradient/hessian histograms and store real-valued
thresholds, so prediction works on raw feature values (``x < threshold`` goes
left).
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .. import _kernels


class FeatureBinner:
    def __init__(self, cuts: list[np.ndarray]):
        self.cuts = [np.asarray(c, dtype=np.float64) for c in cuts]

    @classmethod
    def fit(cls, X: np.ndarray, max_bin: int = 256) -> "FeatureBinner":
        if not 2 <= max_bin <= 65535:
            raise ValueError("max_bin must be in [2, 65535]")
        cuts = []
        for j in range(X.shape[1]):
            u = np.unique(X[:, j])
            if u.size <= max_bin:
                c = (u[:-1] + u[1:]) / 2.0
            else:
                qs = np.quantile(X[:, j], np.linspace(0, 1, max_bin + 1)[1:-1])
                c = np.unique(qs)
                c = c[c > u[0]]
            cuts.append(c)
        return cls(cuts)

    @property
    def n_bins(self) -> int:
        return max((c.size for c in self.cuts), default=0) + 1

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.uint16)
        for j, c in enumerate(self.cuts):
            out[:, j] = np.searchsorted(c, X[:, j], side="right")
        return np.ascontiguousarray(out)


@dataclass
class Tree:
    feature: np.ndarray     # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray       # training rows reaching the node
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                best = max(best, d)
            else:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def scale(self, factor: float) -> None:
        self.value = self.value * factor

    def leaf_paths(self):
        """Yield ``(leaf_value, [(feature, threshold, went_left), ...])`` for every leaf."""
        stack = [(0, [])]
        while stack:
            node, path = stack.pop()
            f = self.feature[node]
            if f < 0:
                yield self.value[node], path
                continue
            thr = self.threshold[node]
            stack.append((self.right[node], path + [(f, thr, False)]))
            stack.append((self.left[node], path + [(f, thr, True)]))

    def to_dict(self) -> dict:
        def node(i):
            d = {"cover": int(self.cover[i]), "value": float(self.value[i])}
            if self.feature[i] >= 0:
                d.update(feature=int(self.feature[i]), threshold=float(self.threshold[i]),
                         gain=float(self.gain[i]), left=node(self.left[i]), right=node(self.right[i]))
            return d
        return node(0)

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        rows = []

        def visit(d):
            i = len(rows)
            rows.append(None)
            if "feature" in d:
                li = visit(d["left"])
                ri = visit(d["right"])
                rows[i] = (d["feature"], d["threshold"], li, ri, d["value"], d["cover"], d["gain"])
            else:
                rows[i] = (-1, 0.0, -1, -1, d["value"], d["cover"], 0.0)
            return i

        visit(root)
        cols = list(zip(*rows))
        return cls(
            feature=np.array(cols[0], dtype=np.intp),
            threshold=np.array(cols[1], dtype=np.float64),
            left=np.array(cols[2], dtype=np.intp),
            right=np.array(cols[3], dtype=np.intp),
            value=np.array(cols[4], dtype=np.float64),
            cover=np.array(cols[5], dtype=np.float64),
            gain=np.array(cols[6], dtype=np.float64),
        )


@dataclass(frozen=True)
class GrowParams:
    max_depth: int = 6
    min_split_loss: float = 0.0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0
    grow_policy: str = "depthwise"
    max_leaves: int = 0
    colsample_bylevel: float = 1.0


def _n_sample(frac: float, k: int) -> int:
    return max(1, int(np.floor(frac * k + 1e-9)))


class _Builder:
    def __init__(self, binned, binner, grad, hess, params: GrowParams, features, rng):
        self.binned = binned
        self.cuts = binner.cuts
        self.n_bins = binner.n_bins
        self.grad = np.ascontiguousarray(grad, dtype=np.float64)
        self.hess = np.ascontiguousarray(hess, dtype=np.float64)
        self.p = params
        self.features = np.asarray(features, dtype=np.intp)
        self.rng = rng
        self.level_features: dict[int, np.ndarray] = {}
        # split bin k is only real if the feature has a k-th cut
        n_cuts = np.array([c.size for c in self.cuts])
        self.has_cut = np.arange(self.n_bins - 1)[None, :] < n_cuts[:, None]
        self.nodes: list[list] = []

    def features_at(self, depth: int) -> np.ndarray:
        if depth not in self.level_features:
            f = self.features
            if self.p.colsample_bylevel < 1.0:
                k = _n_sample(self.p.colsample_bylevel, f.size)
                f = np.sort(self.rng.choice(f, size=k, replace=False))
            self.level_features[depth] = f
        return self.level_features[depth]

    def histogram(self, rows):
        return _kernels.build_histogram(self.binned, rows, self.grad, self.hess, self.n_bins)

    def new_node(self, rows, G, H, depth):
        lam = self.p.reg_lambda
        gsum, hsum = G[0].sum(), H[0].sum()
        self.nodes.append([-1, 0.0, -1, -1, -gsum / (hsum + lam), float(rows.size), 0.0])
        return {"id": len(self.nodes) - 1, "rows": rows, "G": G, "H": H, "depth": depth,
                "gsum": gsum, "hsum": hsum}

    def best_split(self, node):
        if node["depth"] >= self.p.max_depth or node["rows"].size < 2:
            return None
        feats = self.features_at(node["depth"])
        G, H = node["G"][feats], node["H"][feats]
        GL = np.cumsum(G, axis=1)[:, :-1]
        HL = np.cumsum(H, axis=1)[:, :-1]
        Gt, Ht = node["gsum"], node["hsum"]
        GR, HR = Gt - GL, Ht - HL
        lam = self.p.reg_lambda
        mcw = self.p.min_child_weight
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - Gt ** 2 / (Ht + lam))
        ok = self.has_cut[feats] & (HL > 0) & (HR > 0) & (HL >= mcw) & (HR >= mcw)
        gain = np.where(ok & np.isfinite(gain), gain, -np.inf)
        if gain.size == 0:
            return None
        flat = int(np.argmax(gain))
        fi, k = divmod(flat, gain.shape[1])
        best = gain[fi, k]
        if not best > self.p.min_split_loss:
            return None
        return float(best), int(feats[fi]), int(k)

    def split(self, node, found):
        gain, f, k = found
        rows = node["rows"]
        go_left = self.binned[rows, f] <= k
        lrows, rrows = rows[go_left], rows[~go_left]
        small, large = (lrows, rrows) if lrows.size <= rrows.size else (rrows, lrows)
        Gs, Hs = self.histogram(small)
        Gl, Hl = node["G"] - Gs, node["H"] - Hs
        if small is lrows:
            left = self.new_node(lrows, Gs, Hs, node["depth"] + 1)
            right = self.new_node(rrows, Gl, Hl, node["depth"] + 1)
        else:
            left = self.new_node(lrows, Gl, Hl, node["depth"] + 1)
            right = self.new_node(rrows, Gs, Hs, node["depth"] + 1)
        rec = self.nodes[node["id"]]
        rec[0], rec[1], rec[2], rec[3], rec[6] = f, float(self.cuts[f][k]), left["id"], right["id"], gain
        node.pop("G"), node.pop("H")
        return left, right

    def grow(self, rows) -> Tree:
        G, H = self.histogram(rows)
        root = self.new_node(rows, G, H, 0)
        if self.p.grow_policy == "depthwise":
            level = [root]
            while level:
                nxt = []
                for node in level:
                    found = self.best_split(node)
                    if found is not None:
                        nxt.extend(self.split(node, found))
                level = nxt
        elif self.p.grow_policy == "lossguide":
            heap: list = []
            leaves = 1

            def push(node):
                found = self.best_split(node)
                if found is not None:
                    heapq.heappush(heap, (-found[0], node["id"], found, node))

            push(root)
            while heap and (self.p.max_leaves <= 0 or leaves < self.p.max_leaves):
                _, _, found, node = heapq.heappop(heap)
                for child in self.split(node, found):
                    push(child)
                leaves += 1
        else:
            raise ValueError(f"unknown grow_policy {self.p.grow_policy!r}")
        cols = list(zip(*self.nodes))
        return Tree(
            feature=np.array(cols[0], dtype=np.intp),
            threshold=np.array(cols[1], dtype=np.float64),
            left=np.array(cols[2], dtype=np.intp),
            right=np.array(cols[3], dtype=np.intp),
            value=np.array(cols[4], dtype=np.float64),
            cover=np.array(cols[5], dtype=np.float64),
            gain=np.array(cols[6], dtype=np.float64),
        )


def grow_tree(binned, binner, grad, hess, params: GrowParams, rows=None, features=None, rng=None) -> Tree:
    """Grow one tree on precomputed bins; leaf value is ``-sum(g) / (sum(h) + lambda)``."""
    n, p = binned.shape
    rows = np.arange(n, dtype=np.intp) if rows is None else np.asarray(rows, dtype=np.intp)
    features = np.arange(p) if features is None else features
    rng = np.random.default_rng(0) if rng is None else rng
    return _Builder(binned, binner, grad, hess, params, features, rng).grow(rows)


def fit_regression_tree(X, target, max_depth: int = 3, max_bin: int = 256, min_samples_leaf: int = 1) -> Tree:
    """Plain squared-error regression tree (leaf = mean target)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    binner = FeatureBinner.fit(X, max_bin)
    binned = binner.transform(X)
    params = GrowParams(max_depth=max_depth, reg_lambda=0.0, min_child_weight=float(min_samples_leaf))
    return grow_tree(binned, binner, -target, np.ones_like(target), params)
