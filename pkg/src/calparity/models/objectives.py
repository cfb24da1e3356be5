"""Per-sample losses on logits with exact first and second derivatives."""
from __future__ import annotations

import numpy as np

from ..data import sigmoid


def logistic_loss(z, y):
    z = np.asarray(z, dtype=np.float64)
    return np.logaddexp(0.0, z) - y * z


def logistic_grad_hess(z, y):
    p = sigmoid(z)
    return p - y, p * (1.0 - p)


def brier_loss(z, y):
    return (sigmoid(z) - y) ** 2


def brier_grad_hess(z, y):
    # d/dz (p - y)^2 with p = sigmoid(z), dp/dz = p(1-p)
    p = sigmoid(z)
    dp = p * (1.0 - p)
    grad = 2.0 * (p - y) * dp
    hess = 2.0 * dp * dp + 2.0 * (p - y) * dp * (1.0 - 2.0 * p)
    return grad, hess


def squared_grad_hess(pred, target):
    return pred - target, np.ones_like(pred)


OBJECTIVES = {
    "logistic": (logistic_loss, logistic_grad_hess),
    "brier": (brier_loss, brier_grad_hess),
}
