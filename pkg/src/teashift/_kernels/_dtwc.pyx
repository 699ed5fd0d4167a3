# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled DTW kernels: squared-difference local cost, optional Sakoe-Chiba band.

Must stay numerically identical to teashift._kernels.pydtw (same recurrence,
same tie-breaking in the backtrack: diagonal, then up, then left).
"""

import numpy as np


cdef _accumulate(double[::1] a, double[::1] b, long window):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j, jlo, jhi
    cdef long w
    cdef double d, best

    if window < 0:
        w = n + m
    else:
        w = window
        if m - n > w:
            w = m - n
        if n - m > w:
            w = n - m

    arr = np.full((n + 1, m + 1), np.inf)
    cdef double[:, ::1] dp = arr
    dp[0, 0] = 0.0
    for i in range(1, n + 1):
        jlo = i - w if i - w > 1 else 1
        jhi = i + w if i + w < m else m
        for j in range(jlo, jhi + 1):
            d = a[i - 1] - b[j - 1]
            d = d * d
            best = dp[i - 1, j - 1]
            if dp[i - 1, j] < best:
                best = dp[i - 1, j]
            if dp[i, j - 1] < best:
                best = dp[i, j - 1]
            dp[i, j] = d + best
    return arr


def dtw_cost(a, b, long window=-1):
    """Accumulated DTW cost between two 1-D float64 series."""
    cdef double[::1] av = a
    cdef double[::1] bv = b
    dp = _accumulate(av, bv, window)
    return float(dp[av.shape[0], bv.shape[0]])


def dtw_path(a, b, long window=-1):
    """DTW cost plus the aligned index pairs (0-based, monotone)."""
    cdef double[::1] av = a
    cdef double[::1] bv = b
    cdef Py_ssize_t n = av.shape[0]
    cdef Py_ssize_t m = bv.shape[0]
    arr = _accumulate(av, bv, window)
    cdef double[:, ::1] dp = arr

    pi_arr = np.empty(n + m, dtype=np.int64)
    pj_arr = np.empty(n + m, dtype=np.int64)
    cdef long long[::1] pi = pi_arr
    cdef long long[::1] pj = pj_arr
    cdef Py_ssize_t i = n, j = m, k = n + m
    cdef double diag, up, left

    while k > 0:
        k -= 1
        pi[k] = i - 1
        pj[k] = j - 1
        if i == 1 and j == 1:
            break
        diag = dp[i - 1, j - 1]
        up = dp[i - 1, j]
        left = dp[i, j - 1]
        if diag <= up and diag <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
    return float(dp[n, m]), pi_arr[k:].copy(), pj_arr[k:].copy()
