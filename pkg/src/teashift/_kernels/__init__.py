"""DTW kernel dispatch: compiled extension when built, numpy fallback otherwise."""

import numpy as np

try:
    from teashift._kernels import _dtwc as _impl

    BACKEND = "compiled"
except ImportError:
    from teashift._kernels import pydtw as _impl

    BACKEND = "python"


def _as_series(x, name):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    return arr


def dtw_cost(a, b, window=None):
    """Accumulated squared-difference DTW cost between two 1-D series.

    window, when given, is the Sakoe-Chiba half-width; it is widened to
    |len(a) - len(b)| automatically so a warping path always exists.
    """
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    return _impl.dtw_cost(a, b, -1 if window is None else int(window))


def dtw_path(a, b, window=None):
    """DTW cost and the warping path as (cost, idx_a, idx_b) index arrays."""
    a = _as_series(a, "a")
    b = _as_series(b, "b")
    return _impl.dtw_path(a, b, -1 if window is None else int(window))
