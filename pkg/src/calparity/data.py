"""Dataset container, CSV ingestion, splitting and a logistic synthetic generator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

TRUE_P_COLUMN = "__true_p"


class DataError(ValueError):
    """Malformed input data or configuration."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    feature_names: tuple[str, ...]
    group_names: tuple[str, ...]

    def __post_init__(self):
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("features must be a 2-d array")
        y = np.asarray(self.labels).astype(np.int64)
        g = np.asarray(self.groups).astype(np.int64)
        n = X.shape[0]
        if n < 1 or y.shape != (n,) or g.shape != (n,):
            raise DataError(f"features, labels and groups must share length n >= 1 (got {n}, {y.shape}, {g.shape})")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be in {0, 1}")
        if len(self.group_names) < 1:
            raise DataError("at least one group is required")
        if g.min() < 0 or g.max() >= len(self.group_names):
            raise DataError("group ids must lie in 0..G-1")
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match feature count")
        for a in (X, y, g):
            a.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "group_names", tuple(self.group_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def take(self, idx) -> "Dataset":
        """Row subset. Group names are kept even if a group has no rows left."""
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], self.groups[idx],
                       self.feature_names, self.group_names)

    def select_features(self, names: Sequence[str]) -> "Dataset":
        cols = [self.feature_names.index(c) for c in names]
        return Dataset(self.features[:, cols], self.labels, self.groups, tuple(names), self.group_names)

    def drop_features(self, names: Sequence[str]) -> "Dataset":
        drop = set(names)
        return self.select_features([c for c in self.feature_names if c not in drop])


def _check_all_groups_present(ds: Dataset) -> None:
    present = np.bincount(ds.groups, minlength=ds.n_groups)
    missing = [ds.group_names[i] for i in np.flatnonzero(present == 0)]
    if missing:
        raise DataError(f"groups without any rows: {missing}")


@dataclass(frozen=True)
class SplitAssignment:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


# ---------------------------------------------------------------------------
# CSV


def _parse_label(values: list[str]) -> np.ndarray:
    distinct = sorted(set(values))
    try:
        nums = {v: float(v) for v in distinct}
    except ValueError:
        nums = None
    if nums is not None:
        bad = [v for v, x in nums.items() if x not in (0.0, 1.0)]
        if bad:
            raise DataError(f"non-binary label: {bad[0]!r}")
        return np.array([int(nums[v]) for v in values], dtype=np.int64)
    if len(distinct) != 2:
        raise DataError(f"non-binary label: {len(distinct)} distinct values {distinct[:5]}")
    # two non-numeric levels: sorted order, second level is the positive class
    return np.array([int(v == distinct[1]) for v in values], dtype=np.int64)


def load_csv(
    path,
    label_column: str,
    group_column: str,
    categorical_columns: Sequence[str] = (),
    group_order: Sequence[str] | None = None,
    drop_columns: Sequence[str] = (TRUE_P_COLUMN,),
) -> Dataset:
    """Read a headered CSV into a :class:`Dataset`.

    Categorical columns are one-hot encoded with one indicator per level
    (levels in first-appearance order, named ``col=level``); every other column
    must parse as a real number. Group ids follow first appearance unless
    ``group_order`` is given.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        rows = [r for r in reader if r]
    if not rows:
        raise DataError(f"{path}: no data rows")
    for name in (label_column, group_column, *categorical_columns):
        if name not in header:
            raise DataError(f"{path}: missing column {name!r}")
    col = {name: i for i, name in enumerate(header)}
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"{path}: row {lineno} has {len(r)} cells, expected {len(header)}")

    labels = _parse_label([r[col[label_column]].strip() for r in rows])

    raw_groups = [r[col[group_column]] for r in rows]
    if group_order is None:
        names = list(dict.fromkeys(raw_groups))
    else:
        names = list(group_order)
        unknown = set(raw_groups) - set(names)
        if unknown:
            raise DataError(f"{path}: groups {sorted(unknown)} not in group_order")
    gid = {name: i for i, name in enumerate(names)}
    groups = np.array([gid[v] for v in raw_groups], dtype=np.int64)

    cats = set(categorical_columns)
    skip = {label_column, group_column, *drop_columns}
    columns: list[np.ndarray] = []
    feature_names: list[str] = []
    for name in header:
        if name in skip:
            continue
        j = col[name]
        if name in cats:
            values = [r[j] for r in rows]
            for level in dict.fromkeys(values):
                columns.append(np.array([v == level for v in values], dtype=np.float64))
                feature_names.append(f"{name}={level}")
        else:
            out = np.empty(len(rows))
            for i, r in enumerate(rows):
                try:
                    out[i] = float(r[j])
                except ValueError:
                    raise DataError(f"{path}: row {i + 2}, column {name!r}: cannot parse {r[j]!r} as a number") from None
                if math.isnan(out[i]):
                    raise DataError(f"{path}: row {i + 2}, column {name!r}: missing value")
            columns.append(out)
            feature_names.append(name)

    X = np.column_stack(columns) if columns else np.empty((len(rows), 0))
    ds = Dataset(X, labels, groups, tuple(feature_names), tuple(names))
    _check_all_groups_present(ds)
    return ds


def write_csv(dataset: Dataset, path, true_p=None, label_column: str = "y", group_column: str = "group") -> None:
    """Write ``dataset`` in the schema :func:`load_csv` reads (features, label, group)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = [*dataset.feature_names, label_column, group_column]
        if true_p is not None:
            header.append(TRUE_P_COLUMN)
        w.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [str(int(dataset.labels[i])), dataset.group_names[dataset.groups[i]]]
            if true_p is not None:
                row.append(repr(float(true_p[i])))
            w.writerow(row)


# ---------------------------------------------------------------------------
# splitting


def _apportion(n: int, ratios: Sequence[float]) -> list[int]:
    exact = [n * r for r in ratios]
    sizes = [math.floor(e) for e in exact]
    order = sorted(range(len(ratios)), key=lambda k: (-(exact[k] - sizes[k]), k))
    for k in order[: n - sum(sizes)]:
        sizes[k] += 1
    # every partition must be populated; borrow from the largest
    for k in range(len(sizes)):
        while sizes[k] == 0:
            donor = max(range(len(sizes)), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[k] += 1
    return sizes


def split(dataset_or_n, ratios: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> SplitAssignment:
    """Seeded random train/val/test partition.

    Rows are permuted with ``numpy.random.default_rng(seed)`` and sliced
    contiguously; sizes use largest-remainder rounding.
    """
    n = dataset_or_n if isinstance(dataset_or_n, (int, np.integer)) else dataset_or_n.n
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must be three positive numbers summing to 1, got {tuple(ratios)}")
    if n < 3:
        raise DataError(f"need at least 3 rows to populate train/val/test, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    a, b, _ = _apportion(int(n), ratios)
    return SplitAssignment(np.sort(perm[:a]), np.sort(perm[a:a + b]), np.sort(perm[a + b:]), seed)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthConfig:
    """Logistic ground truth per group: ``p = sigmoid(w_g . x + b_g)``.

    ``group_mean_shift`` (G x p, optional) offsets the feature means per group
    so features can act as group proxies; by default x is standard normal.
    """

    n: int
    p: int
    n_groups: int
    group_weights: np.ndarray
    group_bias: np.ndarray
    group_proportions: np.ndarray
    seed: int = 0
    group_mean_shift: np.ndarray | None = None
    feature_names: tuple[str, ...] | None = None
    group_names: tuple[str, ...] | None = None

    def __post_init__(self):
        W = np.asarray(self.group_weights, dtype=np.float64)
        if W.ndim == 1:
            W = np.broadcast_to(W, (self.n_groups, self.p)).copy()
        b = np.asarray(self.group_bias, dtype=np.float64).reshape(-1)
        pi = np.asarray(self.group_proportions, dtype=np.float64).reshape(-1)
        if self.p < 1 or self.n < 1 or self.n_groups < 1:
            raise DataError("n, p and n_groups must be >= 1")
        if W.shape != (self.n_groups, self.p):
            raise DataError(f"group_weights must have shape ({self.n_groups}, {self.p})")
        if b.shape != (self.n_groups,) or pi.shape != (self.n_groups,):
            raise DataError("group_bias and group_proportions need one entry per group")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise DataError("group_proportions must lie on the simplex")
        object.__setattr__(self, "group_weights", W)
        object.__setattr__(self, "group_bias", b)
        object.__setattr__(self, "group_proportions", pi)
        if self.group_mean_shift is not None:
            shift = np.asarray(self.group_mean_shift, dtype=np.float64)
            if shift.shape != (self.n_groups, self.p):
                raise DataError(f"group_mean_shift must have shape ({self.n_groups}, {self.p})")
            object.__setattr__(self, "group_mean_shift", shift)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        for key in ("feature_names", "group_names"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def synth_generate(config: SynthConfig) -> tuple[Dataset, np.ndarray]:
    """Draw a dataset and return it with the true probabilities."""
    rng = np.random.default_rng(config.seed)
    G, p, n = config.n_groups, config.p, config.n
    groups = rng.choice(G, size=n, p=config.group_proportions)
    X = rng.standard_normal((n, p))
    if config.group_mean_shift is not None:
        X += config.group_mean_shift[groups]
    logits = np.einsum("ij,ij->i", X, config.group_weights[groups]) + config.group_bias[groups]
    true_p = sigmoid(logits)
    y = (rng.random(n) < true_p).astype(np.int64)
    feature_names = config.feature_names or tuple(f"x{j}" for j in range(p))
    group_names = config.group_names or tuple(f"g{k}" for k in range(G))
    return Dataset(X, y, groups, feature_names, group_names), true_p
