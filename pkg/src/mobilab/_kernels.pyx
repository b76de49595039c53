# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: group means/demeaning and Gram coordinate descent.

Semantics match ``_kernels_py`` exactly; see that module for reference code.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, fabs, INFINITY

cnp.import_array()


def group_means(values, codes, Py_ssize_t n_groups):
    cdef cnp.ndarray arr = np.asarray(values, dtype=np.float64)
    one_d = arr.ndim == 1
    if one_d:
        arr = arr[:, None]
    cdef double[:, :] v = np.ascontiguousarray(arr)
    cdef cnp.intp_t[:] g = np.ascontiguousarray(codes, dtype=np.intp)
    cdef Py_ssize_t n = v.shape[0], k = v.shape[1], i, j, c
    out_arr = np.zeros((n_groups, k))
    cnt_arr = np.zeros(n_groups)
    cdef double[:, :] out = out_arr
    cdef double[:] cnt = cnt_arr
    with nogil:
        for i in range(n):
            c = g[i]
            cnt[c] += 1.0
            for j in range(k):
                out[c, j] += v[i, j]
        for c in range(n_groups):
            for j in range(k):
                if cnt[c] > 0:
                    out[c, j] /= cnt[c]
    # empty groups have no mean
    if np.any(cnt_arr == 0):
        out_arr[cnt_arr == 0] = np.nan
    return out_arr[:, 0] if one_d else out_arr


def group_demean(values, codes, Py_ssize_t n_groups):
    cdef cnp.ndarray arr = np.asarray(values, dtype=np.float64)
    one_d = arr.ndim == 1
    if one_d:
        arr = arr[:, None]
    means_arr = group_means(arr, codes, n_groups)
    res_arr = np.array(arr, dtype=np.float64, order="C", copy=True)
    cdef double[:, :] res = res_arr
    cdef double[:, :] m = means_arr
    cdef cnp.intp_t[:] g = np.ascontiguousarray(codes, dtype=np.intp)
    cdef Py_ssize_t n = res.shape[0], k = res.shape[1], i, j
    with nogil:
        for i in range(n):
            for j in range(k):
                res[i, j] -= m[g[i], j]
    return res_arr[:, 0] if one_d else res_arr


def group_logsumexp(values, codes, Py_ssize_t n_groups):
    cdef double[:] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.intp_t[:] g = np.ascontiguousarray(codes, dtype=np.intp)
    cdef Py_ssize_t n = v.shape[0], i, c
    peak_arr = np.full(n_groups, -np.inf)
    sums_arr = np.zeros(n_groups)
    cdef double[:] peak = peak_arr
    cdef double[:] sums = sums_arr
    with nogil:
        for i in range(n):
            if v[i] > peak[g[i]]:
                peak[g[i]] = v[i]
        for i in range(n):
            c = g[i]
            sums[c] += exp(v[i] - peak[c])
    with np.errstate(divide="ignore"):
        return peak_arr + np.log(sums_arr)


def cd_gram(gram, xty, beta, l1, l2, double tol, Py_ssize_t max_iter):
    cdef double[:, :] G = np.ascontiguousarray(gram, dtype=np.float64)
    cdef double[:] c = np.ascontiguousarray(xty, dtype=np.float64)
    beta_arr = np.array(beta, dtype=np.float64, copy=True)
    cdef double[:] b = beta_arr
    cdef double[:] a1 = np.ascontiguousarray(l1, dtype=np.float64)
    cdef double[:] a2 = np.ascontiguousarray(l2, dtype=np.float64)
    gb_arr = np.asarray(gram, dtype=np.float64) @ beta_arr
    cdef double[:] gb = gb_arr
    cdef Py_ssize_t k = b.shape[0], j, m, n_iter = 0
    cdef double old, new, rho, delta, max_delta = INFINITY, d
    with nogil:
        while n_iter < max_iter:
            n_iter += 1
            max_delta = 0.0
            for j in range(k):
                d = G[j, j]
                if d <= 0.0:
                    continue
                old = b[j]
                rho = c[j] - gb[j] + d * old
                if rho > a1[j]:
                    new = (rho - a1[j]) / (d + a2[j])
                elif rho < -a1[j]:
                    new = (rho + a1[j]) / (d + a2[j])
                else:
                    new = 0.0
                delta = new - old
                if delta != 0.0:
                    b[j] = new
                    # G is symmetric, so row j equals column j
                    for m in range(k):
                        gb[m] += delta * G[j, m]
                    if fabs(delta) > max_delta:
                        max_delta = fabs(delta)
            if max_delta < tol:
                break
    return beta_arr, n_iter, max_delta
