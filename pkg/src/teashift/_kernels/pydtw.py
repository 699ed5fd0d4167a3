"""Pure-numpy DTW kernels, the fallback when the compiled core is absent.

Same recurrence and backtrack tie-breaking as _dtwc.pyx, so both backends
return bit-identical costs and paths. The accumulation loop is vectorized
over anti-diagonals: cells (i, j) with i + j = s have no mutual dependency,
so each wavefront is one batch of numpy ops instead of n*m Python steps.
"""

import numpy as np


def _accumulate(a, b, window):
    n, m = a.shape[0], b.shape[0]
    w = n + m if window < 0 else max(window, abs(n - m))
    dp = np.full((n + 1, m + 1), np.inf)
    dp[0, 0] = 0.0
    for s in range(2, n + m + 1):
        ilo = max(1, s - m, (s - w + 1) // 2)
        ihi = min(n, s - 1, (s + w) // 2)
        if ilo > ihi:
            continue
        i = np.arange(ilo, ihi + 1)
        j = s - i
        d = a[i - 1] - b[j - 1]
        best = np.minimum(np.minimum(dp[i - 1, j - 1], dp[i - 1, j]), dp[i, j - 1])
        dp[i, j] = d * d + best
    return dp


def dtw_cost(a, b, window=-1):
    """Accumulated DTW cost between two 1-D float64 series."""
    return float(_accumulate(a, b, window)[a.shape[0], b.shape[0]])


def dtw_path(a, b, window=-1):
    """DTW cost plus the aligned index pairs (0-based, monotone)."""
    n, m = a.shape[0], b.shape[0]
    dp = _accumulate(a, b, window)
    pi = np.empty(n + m, dtype=np.int64)
    pj = np.empty(n + m, dtype=np.int64)
    i, j, k = n, m, n + m
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
    return float(dp[n, m]), pi[k:].copy(), pj[k:].copy()
