"""Pure-Python/Numpy kernel backend (used when the extension is absent)."""

import numpy as np
from scipy.optimize import linear_sum_assignment


def lsa_rect(cost):
    """Minimum-cost assignment, n_rows <= n_cols; mirrors _native.lsa_rect."""
    rows, cols = linear_sum_assignment(cost)
    return rows.astype(np.intp), cols.astype(np.intp)


def iou_matrix(a, b):
    """Pairwise IoU of ltwh boxes via broadcasting; (n,4) x (m,4) -> (n,m)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[None, :, 0], b[None, :, 1]
    bx2, by2 = bx1 + b[None, :, 2], by1 + b[None, :, 3]
    iw = np.minimum(ax2, bx2) - np.maximum(ax1, bx1)
    ih = np.minimum(ay2, by2) - np.maximum(ay1, by1)
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = a[:, 2:3] * a[:, 3:4] + (b[None, :, 2] * b[None, :, 3]) - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out
