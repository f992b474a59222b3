"""Hot kernels with backend selection at import time.

The compiled extension (`_native`, Cython) is preferred; the scipy/numpy
fallback is used when the extension is unavailable or when
RASTERTRACK_FORCE_FALLBACK=1 is set. Both backends share one contract and
are equivalence-tested against each other and against brute force.
"""

import os

import numpy as np

from . import pyfallback

if os.environ.get("RASTERTRACK_FORCE_FALLBACK") == "1":
    _impl = pyfallback
    BACKEND = "fallback"
else:
    try:
        from . import _native as _impl
        BACKEND = "native"
    except ImportError:
        _impl = pyfallback
        BACKEND = "fallback"

__all__ = ["BACKEND", "solve_assignment", "iou_matrix"]


def solve_assignment(cost):
    """Minimum-total-cost one-to-one assignment of an (n, m) cost matrix.

    Costs must be finite (callers gate infeasible pairs with a large
    sentinel). Returns (rows, cols) index arrays of length min(n, m) with
    rows sorted ascending, matching the scipy contract.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    n, m = cost.shape
    if n == 0 or m == 0:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
    if n <= m:
        return _impl.lsa_rect(cost)
    cols_t, rows_t = _impl.lsa_rect(np.ascontiguousarray(cost.T))
    order = np.argsort(rows_t, kind="stable")
    return rows_t[order], cols_t[order]


def iou_matrix(a, b):
    """Pairwise IoU between two (n, 4) / (m, 4) arrays of ltwh boxes."""
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return _impl.iou_matrix(a, b)
