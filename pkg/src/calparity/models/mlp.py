"""Two-hidden-layer perceptron trained by minibatch SGD with exact backprop.

Loss specs:

``bce``
    mean binary cross-entropy.
``bce_mmce``
    BCE plus ``gamma`` times the batch MMCE.
``group_dro``
    per-group losses ``L_g = BCE_g + gamma * MMCE_g + C / sqrt(n_g)`` drive an
    exponentiated-gradient update of the group weights ``q``; the batch loss is
    the ``G * q[g]``-weighted BCE plus ``sum_g q_g (gamma * MMCE_g + C / sqrt(n_g))``.
    With ``dro_target="mmce"`` only the calibration term is group-weighted.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import sigmoid
from . import dro
from .gbt import augment

log = logging.getLogger(__name__)

LOSS_SPECS = ("bce", "bce_mmce", "group_dro")
BN_EPS = 1e-5
MMCE_EPS = 1e-12


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpParams:
    layer1_units: int = 128
    layer2_units: int = 64
    learning_rate: float = 1e-3
    l2_regularization: float = 1e-5
    batch_size: int = 512
    num_epochs: int = 30
    batch_norm: bool = True
    calibration_loss_weight: float = 0.0
    dro_eta: float = 0.0
    dro_regularization: float = 0.0
    dro_target: str = "joint"
    momentum: float = 0.9
    kernel_width: float = 0.4
    bn_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.layer1_units < 1 or self.layer2_units < 1:
            raise ValueError("layer units must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.num_epochs < 1:
            raise ValueError("batch_size and num_epochs must be >= 1")
        if self.dro_target not in ("joint", "mmce"):
            raise ValueError("dro_target must be 'joint' or 'mmce'")

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


def init_params(d_in: int, h1: int, h2: int, rng) -> dict:
    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

    W1, b1 = layer(d_in, h1)
    W2, b2 = layer(h1, h2)
    W3, b3 = layer(h2, 1)
    return {
        "W1": W1, "b1": b1, "g1": np.ones(h1), "be1": np.zeros(h1),
        "W2": W2, "b2": b2, "g2": np.ones(h2), "be2": np.zeros(h2),
        "W3": W3, "b3": b3,
    }


# ---------------------------------------------------------------------------
# MMCE on a batch and its gradient w.r.t. the predicted probabilities


def mmce_and_grad(s, y, width: float):
    """Batch MMCE (sqrt of the kernel double sum) and d MMCE / d s."""
    m = s.size
    correct = ((s >= 0.5) == (y == 1)).astype(np.float64)
    r = np.maximum(s, 1.0 - s)
    d = correct - r
    diff = r[:, None] - r[None, :]
    K = np.exp(-np.abs(diff) / width)
    Kd = K @ d
    sq = float(d @ Kd) / (m * m)
    value = np.sqrt(max(sq, 0.0) + MMCE_EPS)
    signed = (np.sign(diff) * K) @ d
    d_sq_dr = (2.0 / (m * m)) * (-Kd - d * signed / width)
    dr_ds = np.where(s >= 0.5, 1.0, -1.0)
    return value, d_sq_dr * dr_ds / (2.0 * value)


# ---------------------------------------------------------------------------
# forward / backward


def _bn_forward(a, gamma, beta):
    mu = a.mean(axis=0)
    var = a.var(axis=0)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a - mu) * inv
    return gamma * xhat + beta, (xhat, inv, mu, var)


def _bn_backward(dz, gamma, cache):
    xhat, inv, _, _ = cache
    m = dz.shape[0]
    dgamma = np.sum(dz * xhat, axis=0)
    dbeta = np.sum(dz, axis=0)
    dxhat = dz * gamma
    da = (inv / m) * (m * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return da, dgamma, dbeta


def forward(params: dict, X, batch_norm: bool, running: dict | None = None):
    """Training-mode forward pass (batch statistics); returns logits and a cache.

    With ``running`` given, normalization uses those statistics instead
    (inference mode).
    """
    cache = {"X": X}
    h = X
    for k in ("1", "2"):
        a = h @ params["W" + k] + params["b" + k]
        if batch_norm:
            if running is None:
                z, cache["bn" + k] = _bn_forward(a, params["g" + k], params["be" + k])
            else:
                mu, var = running["mu" + k], running["var" + k]
                z = params["g" + k] * (a - mu) / np.sqrt(var + BN_EPS) + params["be" + k]
        else:
            z = a
        cache["z" + k] = z
        cache["h" + k] = h = np.maximum(z, 0.0)
    logits = (h @ params["W3"] + params["b3"]).reshape(-1)
    return logits, cache


def backward(params: dict, cache: dict, dlogits, batch_norm: bool) -> dict:
    grads = {}
    dout = dlogits.reshape(-1, 1)
    grads["W3"] = cache["h2"].T @ dout
    grads["b3"] = dout.sum(axis=0)
    dh = dout @ params["W3"].T
    for k, below in (("2", "h1"), ("1", "X")):
        dz = dh * (cache["z" + k] > 0)
        if batch_norm:
            da, grads["g" + k], grads["be" + k] = _bn_backward(dz, params["g" + k], cache["bn" + k])
        else:
            da = dz
            grads["g" + k] = np.zeros_like(params["g" + k])
            grads["be" + k] = np.zeros_like(params["be" + k])
        grads["W" + k] = cache[below].T @ da
        grads["b" + k] = da.sum(axis=0)
        if k == "2":
            dh = da @ params["W2"].T
    return grads


def loss_and_grad(params: dict, X, y, groups, loss_spec: str, cfg: MlpParams,
                  q=None, group_sizes=None, diagnostics: dict | None = None):
    """Batch objective and gradients for every parameter array.

    Also returns the per-group losses used by the DRO update (``None`` unless
    ``loss_spec == "group_dro"``). ``q`` is treated as a constant.
    """
    logits, cache = forward(params, X, cfg.batch_norm)
    s = sigmoid(logits)
    m = y.size
    bce = np.logaddexp(0.0, logits) - y * logits
    gamma = cfg.calibration_loss_weight
    dlogits = np.zeros(m)
    ds = np.zeros(m)
    group_losses = None

    if loss_spec == "bce":
        loss = bce.mean()
        dlogits += (s - y) / m
    elif loss_spec == "bce_mmce":
        loss = bce.mean()
        dlogits += (s - y) / m
        if gamma > 0:
            if np.unique(y).size < 2:
                if diagnostics is not None:
                    diagnostics["skipped_mmce"] = diagnostics.get("skipped_mmce", 0) + 1
            else:
                value, g = mmce_and_grad(s, y, cfg.kernel_width)
                loss += gamma * value
                ds += gamma * g
    elif loss_spec == "group_dro":
        G = q.size
        present = np.zeros(G, dtype=bool)
        group_losses = np.zeros(G)
        joint = cfg.dro_target == "joint"
        if joint:
            w = dro.sample_weights(q, groups)
            loss = np.mean(w * bce)
            dlogits += w * (s - y) / m
        else:
            loss = bce.mean()
            dlogits += (s - y) / m
        for k in range(G):
            idx = np.flatnonzero(groups == k)
            if idx.size == 0:
                continue
            present[k] = True
            Lk = cfg.dro_regularization / np.sqrt(group_sizes[k])
            if joint:
                Lk += bce[idx].mean()
            if gamma > 0:
                if np.unique(y[idx]).size < 2:
                    if diagnostics is not None:
                        diagnostics["skipped_mmce"] = diagnostics.get("skipped_mmce", 0) + 1
                else:
                    value, g = mmce_and_grad(s[idx], y[idx], cfg.kernel_width)
                    Lk += gamma * value
                    loss += q[k] * gamma * value
                    ds[idx] += q[k] * gamma * g
            loss += q[k] * cfg.dro_regularization / np.sqrt(group_sizes[k])
            group_losses[k] = Lk
        group_losses = np.where(present, group_losses, np.nan)
    else:
        raise ValueError(f"unknown loss_spec {loss_spec!r}")

    dlogits += ds * s * (1.0 - s)
    grads = backward(params, cache, dlogits, cfg.batch_norm)
    l2 = cfg.l2_regularization
    if l2 > 0:
        for k in ("W1", "W2", "W3"):
            loss += 0.5 * l2 * np.sum(params[k] ** 2)
            grads[k] = grads[k] + l2 * params[k]
    return float(loss), grads, group_losses, cache


# ---------------------------------------------------------------------------
# model


@dataclass
class MlpModel:
    params: dict
    running: dict
    x_mean: np.ndarray
    x_scale: np.ndarray
    config: MlpParams
    loss_spec: str
    n_features: int
    group_mode: str = "none"
    n_groups: int = 0
    history: dict = field(default_factory=dict)

    kind = "mlp"

    def _design(self, X, groups):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1] if X.ndim == 2 else X.shape}")
        Xs = (X - self.x_mean) / self.x_scale
        return augment(Xs, groups, self.group_mode, self.n_groups)

    def predict_logit(self, X, groups=None) -> np.ndarray:
        logits, _ = forward(self.params, self._design(X, groups), self.config.batch_norm,
                            running=self.running if self.config.batch_norm else None)
        return logits

    def predict(self, X, groups=None) -> np.ndarray:
        return sigmoid(self.predict_logit(X, groups))

    def to_dict(self) -> dict:
        def arr(a):
            a = np.asarray(a)
            return {"shape": list(a.shape), "data": a.ravel().tolist()}
        return {
            "kind": "mlp",
            "version": 1,
            "config": asdict(self.config),
            "loss_spec": self.loss_spec,
            "n_features": self.n_features,
            "group_mode": self.group_mode,
            "n_groups": self.n_groups,
            "params": {k: arr(v) for k, v in self.params.items()},
            "running": {k: arr(v) for k, v in self.running.items()},
            "x_mean": arr(self.x_mean),
            "x_scale": arr(self.x_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpModel":
        def arr(x):
            return np.asarray(x["data"], dtype=np.float64).reshape(x["shape"])
        return cls(
            params={k: arr(v) for k, v in d["params"].items()},
            running={k: arr(v) for k, v in d["running"].items()},
            x_mean=arr(d["x_mean"]),
            x_scale=arr(d["x_scale"]),
            config=MlpParams.from_dict(d["config"]),
            loss_spec=d["loss_spec"],
            n_features=int(d["n_features"]),
            group_mode=d.get("group_mode", "none"),
            n_groups=int(d.get("n_groups", 0)),
        )


def mlp_train(X, y, params: MlpParams | None = None, loss_spec: str = "bce", groups=None,
              group_mode: str = "none", n_groups: int | None = None) -> MlpModel:
    """Fit the network; ``groups`` is read only for ``group_dro`` or ``as_feature``."""
    cfg = params or MlpParams()
    if loss_spec not in LOSS_SPECS:
        raise ValueError(f"unknown loss_spec {loss_spec!r}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.size or y.size == 0:
        raise ValueError("X must be (n, p) with n == len(y) > 0")
    needs_groups = loss_spec == "group_dro" or group_mode == "as_feature"
    if needs_groups:
        if groups is None:
            raise ValueError("groups are required for group_dro or group_mode='as_feature'")
        groups = np.asarray(groups, dtype=np.int64)
        n_groups = n_groups or int(groups.max()) + 1
    else:
        n_groups = n_groups or 0

    x_mean = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    Z = augment((X - x_mean) / x_scale, groups, group_mode, n_groups)
    n, d_in = Z.shape

    rng = np.random.default_rng(cfg.seed)
    params = init_params(d_in, cfg.layer1_units, cfg.layer2_units, rng)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    running = {"mu1": np.zeros(cfg.layer1_units), "var1": np.ones(cfg.layer1_units),
               "mu2": np.zeros(cfg.layer2_units), "var2": np.ones(cfg.layer2_units)}
    q = None
    group_sizes = None
    if loss_spec == "group_dro":
        q = dro.uniform_weights(n_groups)
        group_sizes = np.maximum(np.bincount(groups, minlength=n_groups), 1)

    diagnostics: dict = {"skipped_mmce": 0}
    history = {"loss": [], "q": []}
    n_batches = max(1, int(np.ceil(n / cfg.batch_size)))
    for epoch in range(cfg.num_epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for b, idx in enumerate(np.array_split(perm, n_batches)):
            gb = groups[idx] if groups is not None else None
            loss, grads, group_losses, cache = loss_and_grad(
                params, Z[idx], y[idx], gb, loss_spec, cfg, q, group_sizes, diagnostics)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}: {loss}; "
                                    f"last epoch losses {history['loss'][-3:]}")
            if loss_spec == "group_dro":
                present = np.isfinite(group_losses)
                q = dro.group_dro_step(q, np.where(present, group_losses, 0.0) * present, cfg.dro_eta)
            if cfg.batch_norm:
                for k in ("1", "2"):
                    _, _, mu, var = cache["bn" + k]
                    running["mu" + k] = cfg.bn_momentum * running["mu" + k] + (1 - cfg.bn_momentum) * mu
                    running["var" + k] = cfg.bn_momentum * running["var" + k] + (1 - cfg.bn_momentum) * var
            for k in params:
                velocity[k] = cfg.momentum * velocity[k] + grads[k]
                params[k] = params[k] - cfg.learning_rate * velocity[k]
            epoch_loss += loss * idx.size
        history["loss"].append(epoch_loss / n)
        if q is not None:
            history["q"].append(q.tolist())
    if diagnostics["skipped_mmce"]:
        log.info("MMCE term skipped on %d single-class batches", diagnostics["skipped_mmce"])
    history["skipped_mmce"] = diagnostics["skipped_mmce"]
    return MlpModel(params, running, x_mean, x_scale, cfg, loss_spec, X.shape[1], group_mode, n_groups, history)
