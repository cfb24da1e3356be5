"""Exponentiated-gradient group weights."""
from __future__ import annotations

import numpy as np


def uniform_weights(n_groups: int) -> np.ndarray:
    return np.full(n_groups, 1.0 / n_groups)


def group_dro_step(q, per_group_losses, eta: float) -> np.ndarray:
    """One mirror-ascent update ``q_g <- q_g exp(eta L_g) / Z``.

    The exponent is shifted by its maximum before exponentiating so large
    ``eta * L`` cannot overflow.
    """
    q = np.asarray(q, dtype=np.float64)
    L = np.asarray(per_group_losses, dtype=np.float64)
    if q.shape != L.shape:
        raise ValueError("q and per_group_losses must have the same shape")
    if not np.all(np.isfinite(L)):
        raise ValueError("per-group losses must be finite")
    if eta == 0:
        return q.copy()
    with np.errstate(divide="ignore"):
        logits = np.log(q) + eta * L
    logits -= np.max(logits)
    w = np.exp(logits)
    return w / w.sum()


def sample_weights(q, groups) -> np.ndarray:
    """Per-sample multipliers ``G * q[g_i]``; all ones when ``q`` is uniform."""
    q = np.asarray(q, dtype=np.float64)
    return (q.size * q)[np.asarray(groups)]
