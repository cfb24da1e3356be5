# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``_pure``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def build_histogram(const cnp.uint16_t[:, ::1] binned, const cnp.intp_t[::1] rows,
                    const double[::1] grad, const double[::1] hess, Py_ssize_t n_bins):
    cdef Py_ssize_t p = binned.shape[1]
    cdef Py_ssize_t m = rows.shape[0]
    G_arr = np.zeros((p, n_bins), dtype=np.float64)
    H_arr = np.zeros((p, n_bins), dtype=np.float64)
    cdef double[:, ::1] G = G_arr
    cdef double[:, ::1] H = H_arr
    cdef Py_ssize_t i, j, r
    cdef double g, h
    with nogil:
        for i in range(m):
            r = rows[i]
            g = grad[r]
            h = hess[r]
            for j in range(p):
                G[j, binned[r, j]] += g
                H[j, binned[r, j]] += h
    return G_arr, H_arr


def pava(const double[::1] sums, const double[::1] weights):
    cdef Py_ssize_t n = sums.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    if n == 0:
        return out_arr
    # stack of pooled blocks: sum, weight, first index
    cdef double[::1] bs = np.empty(n, dtype=np.float64)
    cdef double[::1] bw = np.empty(n, dtype=np.float64)
    cdef cnp.intp_t[::1] start = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t top = -1
    cdef Py_ssize_t i, k, stop
    cdef double v
    with nogil:
        for i in range(n):
            top += 1
            bs[top] = sums[i]
            bw[top] = weights[i]
            start[top] = i
            while top > 0 and bs[top - 1] * bw[top] > bs[top] * bw[top - 1]:
                bs[top - 1] += bs[top]
                bw[top - 1] += bw[top]
                top -= 1
        stop = n
        for k in range(top, -1, -1):
            v = bs[k] / bw[k]
            for i in range(start[k], stop):
                out[i] = v
            stop = start[k]
    return out_arr


def mmce_sorted_sum(const double[::1] d, const double[::1] r, double width):
    cdef Py_ssize_t n = d.shape[0]
    cdef Py_ssize_t i
    cdef double total = 0.0
    cdef double carry = 0.0
    with nogil:
        for i in range(n):
            if i > 0:
                carry = exp(-(r[i] - r[i - 1]) / width) * (carry + d[i - 1])
            total += d[i] * d[i] + 2.0 * d[i] * carry
    return total


def largest_monotone_bins(const double[::1] y_sorted):
    cdef Py_ssize_t n = y_sorted.shape[0]
    cdef double[::1] cs = np.empty(n + 1, dtype=np.float64)
    cdef Py_ssize_t i, b, k, q, rem, lo, hi, size
    cdef double prev, cur
    cdef bint ok
    cdef Py_ssize_t found = 1
    cs[0] = 0.0
    for i in range(n):
        cs[i + 1] = cs[i] + y_sorted[i]
    with nogil:
        for b in range(n, 0, -1):
            q = n // b
            rem = n % b
            ok = True
            prev = -1.0
            lo = 0
            for k in range(b):
                size = q + 1 if k >= b - rem else q
                hi = lo + size
                cur = (cs[hi] - cs[lo]) / size
                if cur < prev:
                    ok = False
                    break
                prev = cur
                lo = hi
            if ok:
                found = b
                break
    return found


def predict_tree(const double[:, ::1] X, const cnp.intp_t[::1] feature,
                 const double[::1] threshold, const cnp.intp_t[::1] left,
                 const cnp.intp_t[::1] right, const double[::1] value):
    cdef Py_ssize_t n = X.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, node
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = value[node]
    return out_arr
