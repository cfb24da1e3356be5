"""Post-hoc score calibrators.

Each ``fit_*`` function returns an immutable calibrator with
``apply(scores, groups=None)`` and a JSON form ``{kind, params, version}``.
Only the per-group calibrator reads ``groups`` at apply time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, expit, logit

from . import _kernels

EPS = 1e-6
VERSION = 1


class CalibrationError(ValueError):
    pass


class UnsupportedCalibrator(CalibrationError):
    """Raised for calibrator kinds this package deliberately does not provide."""


def _clip(s):
    return np.clip(s, EPS, 1 - EPS)


def _prep(scores, labels=None, unit: bool = True):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise CalibrationError("no scores")
    if not np.all(np.isfinite(s)):
        raise CalibrationError("scores must be finite")
    if unit and (np.any(s < 0) or np.any(s > 1)):
        raise CalibrationError("scores must lie in [0, 1]")
    if labels is None:
        return s
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape != s.shape:
        raise CalibrationError(f"scores and labels differ in length ({s.size} vs {y.size})")
    return s, y


def _both_classes(y):
    if np.all(y == y[0]):
        raise CalibrationError("labels contain a single class; a parametric fit needs both")


class _Base:
    kind = ""
    unit_domain = True

    def apply(self, scores, groups=None) -> np.ndarray:
        return self._apply(_prep(scores, unit=self.unit_domain))

    def _params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self._params(), "version": VERSION}


# ---------------------------------------------------------------- isotonic

@dataclass(frozen=True)
class IsotonicCalibrator(_Base):
    """Non-decreasing step function on the distinct fitted scores."""

    knots: np.ndarray
    values: np.ndarray
    kind = "isotonic"
    unit_domain = False

    def _apply(self, s):
        idx = np.searchsorted(self.knots, s, side="right") - 1
        return self.values[np.clip(idx, 0, self.knots.size - 1)]

    def _params(self):
        return {"knots": self.knots.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_params(cls, p):
        return cls(np.asarray(p["knots"], float), np.asarray(p["values"], float))


def pava(scores, labels) -> IsotonicCalibrator:
    """Isotonic least-squares fit by pool-adjacent-violators.

    Equal scores are merged first, so each distinct score gets one fitted
    value. Lookup returns the value of the largest knot at or below the
    query, clamped to the first and last knot outside the fitted range.
    Scores may be any finite reals.
    """
    s, y = _prep(scores, labels, unit=False)
    knots, inverse = np.unique(s, return_inverse=True)
    sums = np.bincount(inverse, weights=y, minlength=knots.size)
    counts = np.bincount(inverse, minlength=knots.size).astype(np.float64)
    values = np.asarray(_kernels.pava(sums, counts), dtype=np.float64)
    return IsotonicCalibrator(knots, values)


fit_isotonic = pava


# ---------------------------------------------------------------- histogram

@dataclass(frozen=True)
class HistogramCalibrator(_Base):
    """Piecewise-constant map; bin ``k`` covers ``[edges[k-1], edges[k])``."""

    edges: np.ndarray  # interior edges, length M - 1
    values: np.ndarray
    kind = "histogram"

    def bin_index(self, s):
        return np.searchsorted(self.edges, s, side="right")

    def _apply(self, s):
        return self.values[self.bin_index(s)]

    def _params(self):
        return {"edges": self.edges.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_params(cls, p):
        return cls(np.asarray(p["edges"], float), np.asarray(p["values"], float))


def _mass_edges(s, n_bins):
    srt = np.sort(s, kind="stable")
    q, rem = divmod(s.size, n_bins)
    sizes = np.full(n_bins, q)
    sizes[n_bins - rem:] += 1  # same bin sizes as the equal-mass metrics
    ends = np.cumsum(sizes)[:-1]
    return (srt[ends - 1] + srt[ends]) / 2.0


def fit_histogram(scores, labels, n_bins: int = 10, scheme: str = "width") -> HistogramCalibrator:
    """Histogram binning. Each bin maps to the mean target of its training members.

    ``scheme`` is ``width`` (edges ``k/M``) or ``mass`` (edges midway between
    neighbouring order statistics). Bins left empty map to the global mean.
    Targets may be real-valued, which lets the Platt binner reuse this fit.
    """
    s, y = _prep(scores, labels)
    if n_bins < 1:
        raise CalibrationError("n_bins must be >= 1")
    if scheme == "width":
        edges = np.arange(1, n_bins) / n_bins
    elif scheme == "mass":
        if n_bins > s.size:
            raise CalibrationError(f"cannot fill {n_bins} equal-mass bins with {s.size} samples")
        edges = _mass_edges(s, n_bins)
    else:
        raise CalibrationError(f"unknown binning scheme {scheme!r}")
    idx = np.searchsorted(edges, s, side="right")
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=y, minlength=n_bins)
    values = np.full(n_bins, y.mean())
    filled = counts > 0
    values[filled] = sums[filled] / counts[filled]
    return HistogramCalibrator(edges, values)


# ---------------------------------------------------------------- logistic family

def _newton_logistic(F, y, max_iter: int = 100, tol: float = 1e-10):
    """Minimize mean logistic loss of ``sigmoid(F @ w)`` by damped Newton steps."""
    n, k = F.shape
    w = np.zeros(k)

    def nll(w):
        z = F @ w
        return float(np.mean(np.logaddexp(0, z) - y * z))

    loss = nll(w)
    for _ in range(max_iter):
        p = expit(F @ w)
        grad = F.T @ (p - y) / n
        if np.max(np.abs(grad)) < tol:
            return w
        H = (F * (p * (1 - p))[:, None]).T @ F / n + 1e-12 * np.eye(k)
        step = np.linalg.solve(H, grad)
        t = 1.0
        while t > 1e-10:
            cand = w - t * step
            new = nll(cand)
            if new <= loss:
                break
            t /= 2
        else:
            return w
        improvement = loss - new
        w, loss = cand, new
        # separable data: the likelihood only approaches its supremum
        if improvement <= 1e-15 * max(1.0, abs(loss)):
            return w
    p = expit(F @ w)
    raise CalibrationError(
        f"Newton iterations did not converge in {max_iter} steps (gradient norm {np.linalg.norm(F.T @ (p - y) / n):.3e})")


@dataclass(frozen=True)
class PlattCalibrator(_Base):
    """``sigmoid(a * logit(s) + b)``."""

    a: float
    b: float
    kind = "platt"

    def _apply(self, s):
        return expit(self.a * logit(_clip(s)) + self.b)

    def _params(self):
        return {"a": self.a, "b": self.b}

    @classmethod
    def from_params(cls, p):
        return cls(float(p["a"]), float(p["b"]))


def fit_platt(scores, labels, use_target_smoothing: bool = False) -> PlattCalibrator:
    s, y = _prep(scores, labels)
    _both_classes(y)
    if use_target_smoothing:
        pos = y.sum()
        neg = y.size - pos
        y = np.where(y > 0.5, (pos + 1) / (pos + 2), 1 / (neg + 2))
    F = np.column_stack([logit(_clip(s)), np.ones_like(s)])
    a, b = _newton_logistic(F, y)
    return PlattCalibrator(float(a), float(b))


@dataclass(frozen=True)
class BetaCalibrator(_Base):
    """``sigmoid(a ln s - b ln(1 - s) + c)`` with ``a, b >= 0``."""

    a: float
    b: float
    c: float
    kind = "beta"

    def _apply(self, s):
        s = _clip(s)
        return expit(self.a * np.log(s) - self.b * np.log1p(-s) + self.c)

    def _params(self):
        return {"a": self.a, "b": self.b, "c": self.c}

    @classmethod
    def from_params(cls, p):
        return cls(float(p["a"]), float(p["b"]), float(p["c"]))


def fit_beta(scores, labels) -> BetaCalibrator:
    """Beta calibration. A negative shape coefficient is pinned at zero and the rest refit."""
    s, y = _prep(scores, labels)
    _both_classes(y)
    s = _clip(s)
    F = np.column_stack([np.log(s), -np.log1p(-s), np.ones_like(s)])
    active = [0, 1, 2]
    while True:
        w = np.zeros(3)
        w[active] = _newton_logistic(F[:, active], y)
        negative = [j for j in (0, 1) if j in active and w[j] < 0]
        if not negative:
            return BetaCalibrator(float(w[0]), float(w[1]), float(w[2]))
        worst = min(negative, key=lambda j: w[j])
        active.remove(worst)


@dataclass(frozen=True)
class TemperatureCalibrator(_Base):
    """``sigmoid(logit(s) / T)``."""

    temperature: float
    kind = "temperature"

    def _apply(self, s):
        if self.temperature == 1.0:
            return s.copy()
        return expit(logit(_clip(s)) / self.temperature)

    def _params(self):
        return {"temperature": self.temperature}

    @classmethod
    def from_params(cls, p):
        return cls(float(p["temperature"]))


def fit_temperature(scores, labels, t_bounds=(0.01, 100.0), tol: float = 1e-10) -> TemperatureCalibrator:
    """Golden-section search for the NLL-minimizing temperature over ``log T``.

    The interior optimum is compared against both bounds, so a likelihood
    that keeps falling toward a bound returns that bound.
    """
    s, y = _prep(scores, labels)
    _both_classes(y)
    lo, hi = float(t_bounds[0]), float(t_bounds[1])
    if not 0 < lo < hi:
        raise CalibrationError("t_bounds must satisfy 0 < low < high")
    z = logit(_clip(s))

    def nll(log_t):
        u = z / np.exp(log_t)
        return float(np.mean(np.logaddexp(0, u) - y * u))

    invphi = (np.sqrt(5) - 1) / 2
    a, b = np.log(lo), np.log(hi)
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = nll(c), nll(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = nll(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = nll(d)
    candidates = [(nll(np.log(lo)), lo), ((fc, np.exp(c)) if fc < fd else (fd, np.exp(d))), (nll(np.log(hi)), hi)]
    best = min(candidates, key=lambda t: t[0])
    return TemperatureCalibrator(float(best[1]))


# ---------------------------------------------------------------- ensembles

@dataclass(frozen=True)
class BbqCalibrator(_Base):
    """Convex combination of equal-mass histograms weighted by marginal likelihood."""

    members: tuple
    weights: np.ndarray
    kind = "bbq"

    def _apply(self, s):
        out = np.zeros_like(s)
        for w, m in zip(self.weights, self.members):
            out += w * m._apply(s)
        return np.clip(out, 0.0, 1.0)

    def _params(self):
        return {"weights": self.weights.tolist(), "members": [m._params() for m in self.members]}

    @classmethod
    def from_params(cls, p):
        return cls(tuple(HistogramCalibrator.from_params(m) for m in p["members"]), np.asarray(p["weights"], float))


def _log_marginal(cal: HistogramCalibrator, s, y) -> float:
    idx = cal.bin_index(s)
    m = np.bincount(idx, minlength=cal.values.size)
    k = np.bincount(idx, weights=y, minlength=cal.values.size)
    return float(np.sum(betaln(k + 1, m - k + 1)))


def fit_bbq(scores, labels, bin_counts=None) -> BbqCalibrator:
    """Bayesian binning into quantiles with a uniform Beta prior per bin.

    ``bin_counts`` defaults to every count from 2 to ``min(20, n)``.
    """
    s, y = _prep(scores, labels)
    if bin_counts is None:
        bin_counts = range(2, min(20, s.size) + 1) if s.size >= 2 else (1,)
    bin_counts = [int(b) for b in bin_counts]
    if not bin_counts:
        raise CalibrationError("bin_counts must be nonempty")
    members = tuple(fit_histogram(s, y, b, "mass") for b in bin_counts)
    logs = np.array([_log_marginal(m, s, y) for m in members])
    w = np.exp(logs - logs.max())
    return BbqCalibrator(members, w / w.sum())


@dataclass(frozen=True)
class PlattBinnerCalibrator(_Base):
    """Histogram binning composed with Platt scaling."""

    platt: PlattCalibrator
    binner: HistogramCalibrator
    kind = "platt_binner"

    def _apply(self, s):
        return self.binner._apply(self.platt._apply(s))

    def _params(self):
        return {"platt": self.platt._params(), "binner": self.binner._params()}

    @classmethod
    def from_params(cls, p):
        return cls(PlattCalibrator.from_params(p["platt"]), HistogramCalibrator.from_params(p["binner"]))


def fit_platt_binner(scores, labels, n_bins: int = 10, seed: int = 0) -> PlattBinnerCalibrator:
    """Platt on one half of a seeded shuffle, equal-mass bins on the other half.

    After shuffling, even positions fit the Platt map. Odd positions are
    mapped through it and binned; each bin outputs the mean Platt output of
    its members, so the result takes at most ``n_bins`` values.
    """
    s, y = _prep(scores, labels)
    perm = np.random.default_rng(seed).permutation(s.size)
    first, second = perm[0::2], perm[1::2]
    if second.size < n_bins:
        raise CalibrationError(f"need at least {2 * n_bins} samples for {n_bins} bins")
    platt = fit_platt(s[first], y[first])
    mapped = platt._apply(s[second])
    return PlattBinnerCalibrator(platt, fit_histogram(mapped, mapped, n_bins, "mass"))


# ---------------------------------------------------------------- group-aware

@dataclass(frozen=True)
class PerGroupCalibrator(_Base):
    """Independent inner calibrator per group id; apply routes by group."""

    inner_kind: str
    members: dict = field(default_factory=dict)
    kind = "per_group"

    def apply(self, scores, groups=None) -> np.ndarray:
        s = _prep(scores)
        if groups is None:
            raise CalibrationError("per-group calibration needs group ids at apply time")
        g = np.asarray(groups).reshape(-1)
        if g.shape != s.shape:
            raise CalibrationError("scores and groups differ in length")
        out = np.empty_like(s)
        for gid in np.unique(g):
            if int(gid) not in self.members:
                raise CalibrationError(f"group {int(gid)} was not seen when fitting")
            mask = g == gid
            out[mask] = self.members[int(gid)]._apply(s[mask])
        return out

    def _params(self):
        return {"inner_kind": self.inner_kind,
                "members": {str(k): v.to_dict() for k, v in sorted(self.members.items())}}

    @classmethod
    def from_params(cls, p):
        return cls(p["inner_kind"], {int(k): calibrator_from_dict(v) for k, v in p["members"].items()})


def fit_per_group(scores, labels, groups, inner_kind: str = "isotonic", inner_params: dict | None = None):
    s, y = _prep(scores, labels)
    g = np.asarray(groups).reshape(-1)
    if g.shape != s.shape:
        raise CalibrationError("scores and groups differ in length")
    if inner_kind in ("per_group", "group_robust"):
        raise CalibrationError(f"{inner_kind!r} cannot be nested inside a per-group calibrator")
    members = {}
    for gid in np.unique(g):
        mask = g == gid
        try:
            members[int(gid)] = fit_calibrator(inner_kind, s[mask], y[mask], **(inner_params or {}))
        except CalibrationError as exc:
            raise CalibrationError(f"group {int(gid)}: {exc}") from exc
    return PerGroupCalibrator(inner_kind, members)


@dataclass(frozen=True)
class GroupRobustCalibrator(_Base):
    """Boosted trees on the score alone, trained with group-reweighted Brier loss."""

    model: object
    kind = "group_robust"

    def _apply(self, s):
        return self.model.predict(s[:, None])

    def _params(self):
        return {"model": self.model.to_dict()}

    @classmethod
    def from_params(cls, p):
        from .models.gbt import GbtModel
        return cls(GbtModel.from_dict(p["model"]))


GROUP_ROBUST_DEFAULTS = {
    "objective": "brier", "max_depth": 3, "boosting_rounds": 25, "eta": 0.3, "max_bin": 256,
    "calibration_loss_weight": 1.0, "dro_eta": 2.0,
}


def fit_group_robust(scores, labels, groups, gbt_params: dict | None = None, dro_params: dict | None = None):
    """Fit on validation scores. ``groups`` steers training only; apply ignores them.

    ``dro_params`` may set ``calibration_loss_weight`` and ``dro_eta``; both
    must be positive for the reweighting to engage.
    """
    from .models.gbt import GbtParams, gbt_train

    s, y = _prep(scores, labels)
    g = np.asarray(groups, dtype=np.int64).reshape(-1)
    if g.shape != s.shape:
        raise CalibrationError("scores and groups differ in length")
    params = GbtParams.from_dict({**GROUP_ROBUST_DEFAULTS, **(gbt_params or {}), **(dro_params or {})})
    model = gbt_train(s[:, None], y, params, groups=g, n_groups=int(g.max()) + 1)
    return GroupRobustCalibrator(model)


# ---------------------------------------------------------------- dispatch

_CLASSES = {c.kind: c for c in (
    IsotonicCalibrator, HistogramCalibrator, PlattCalibrator, BetaCalibrator, TemperatureCalibrator,
    BbqCalibrator, PlattBinnerCalibrator, PerGroupCalibrator, GroupRobustCalibrator)}

_FITTERS = {
    "isotonic": fit_isotonic,
    "histogram": fit_histogram,
    "platt": fit_platt,
    "beta": fit_beta,
    "temperature": fit_temperature,
    "bbq": fit_bbq,
    "platt_binner": fit_platt_binner,
}

KINDS = tuple(_FITTERS) + ("per_group", "group_robust")


def fit_calibrator(kind: str, scores, labels, groups=None, **params):
    """Fit a calibrator by kind name; group-aware kinds require ``groups``."""
    if kind == "enir":
        raise UnsupportedCalibrator("the 'enir' calibrator is not implemented; choose one of " + ", ".join(KINDS))
    if kind == "per_group":
        if groups is None:
            raise CalibrationError("per_group calibration needs groups")
        return fit_per_group(scores, labels, groups, **params)
    if kind == "group_robust":
        if groups is None:
            raise CalibrationError("group_robust calibration needs groups")
        return fit_group_robust(scores, labels, groups, **params)
    if kind not in _FITTERS:
        raise UnsupportedCalibrator(f"unknown calibrator kind {kind!r}")
    return _FITTERS[kind](scores, labels, **params)


def calibrator_from_dict(d: dict):
    if d.get("version") != VERSION:
        raise CalibrationError(f"unsupported calibrator version {d.get('version')!r}")
    cls = _CLASSES.get(d.get("kind"))
    if cls is None:
        raise CalibrationError(f"unknown calibrator kind {d.get('kind')!r}")
    return cls.from_params(d["params"])
