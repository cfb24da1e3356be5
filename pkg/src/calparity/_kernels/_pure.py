"""Numpy implementations of the compiled kernels (same signatures as ``_core``)."""
from __future__ import annotations

import numpy as np


def build_histogram(binned, rows, grad, hess, n_bins):
    p = binned.shape[1]
    flat = (binned[rows].astype(np.intp) + np.arange(p, dtype=np.intp) * n_bins).ravel()
    size = p * n_bins
    G = np.bincount(flat, weights=np.repeat(grad[rows], p), minlength=size)
    H = np.bincount(flat, weights=np.repeat(hess[rows], p), minlength=size)
    return G.reshape(p, n_bins), H.reshape(p, n_bins)


def pava(sums, weights):
    n = len(sums)
    out = np.empty(n, dtype=np.float64)
    bs: list[float] = []
    bw: list[float] = []
    start: list[int] = []
    for i in range(n):
        bs.append(float(sums[i]))
        bw.append(float(weights[i]))
        start.append(i)
        # cross-multiplied comparison keeps pooling decisions exact for integer sums
        while len(bs) > 1 and bs[-2] * bw[-1] > bs[-1] * bw[-2]:
            s, w = bs.pop(), bw.pop()
            start.pop()
            bs[-1] += s
            bw[-1] += w
    stop = n
    for k in range(len(bs) - 1, -1, -1):
        out[start[k]:stop] = bs[k] / bw[k]
        stop = start[k]
    return out


def mmce_sorted_sum(d, r, width):
    d = np.asarray(d, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    decay = np.exp(-np.diff(r) / width)
    total = float(np.dot(d, d))
    carry = 0.0
    for i in range(1, len(d)):
        carry = decay[i - 1] * (carry + d[i - 1])
        total += 2.0 * d[i] * carry
    return total


_PROBE = 64


def largest_monotone_bins(y_sorted):
    y = np.asarray(y_sorted, dtype=np.float64)
    n = len(y)
    cs = np.concatenate(([0.0], np.cumsum(y)))
    for b in range(n, 0, -1):
        q, rem = divmod(n, b)
        sizes = np.full(b, q, dtype=np.intp)
        sizes[b - rem:] += 1
        bounds = np.concatenate(([0], np.cumsum(sizes)))
        # cheap probe on the leading bins before paying for the full pass
        k = min(b, _PROBE)
        head = (cs[bounds[1:k + 1]] - cs[bounds[:k]]) / sizes[:k]
        if np.any(np.diff(head) < 0):
            continue
        means = (cs[bounds[1:]] - cs[bounds[:-1]]) / sizes
        if not np.any(np.diff(means) < 0):
            return b
    return 1


def predict_tree(X, feature, threshold, left, right, value):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.intp)
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        cur = node[active]
        go_left = X[active, feature[cur]] < threshold[cur]
        node[active] = np.where(go_left, left[cur], right[cur])
        active = active[feature[node[active]] >= 0]
    return value[node].astype(np.float64)
