# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: linear-sum assignment and IoU matrices.

The assignment solver is the shortest-augmenting-path (Jonker-Volgenant
style) O(n^2 m) algorithm over row potentials; it requires finite costs and
n_rows <= n_cols (the dispatching wrapper transposes when needed).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def lsa_rect(double[:, ::1] cost):
    """Minimum-cost assignment for an n x m cost matrix with n <= m.

    Returns (rows, cols): row i is assigned to column cols[k] where
    rows[k] == i; rows is sorted ascending and covers every row.
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    if n == 0:
        return np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)

    # potentials over rows (u) and columns (v); match[j] = row assigned to j
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_arr = np.zeros(n + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_arr = np.zeros(m + 1)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] minv_arr = np.zeros(m + 1)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] match_arr = np.zeros(m + 1, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] way_arr = np.zeros(m + 1, dtype=np.intp)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used_arr = np.zeros(m + 1, dtype=np.uint8)

    cdef double[:] u = u_arr
    cdef double[:] v = v_arr
    cdef double[:] minv = minv_arr
    cdef Py_ssize_t[:] match = match_arr
    cdef Py_ssize_t[:] way = way_arr
    cdef cnp.uint8_t[:] used = used_arr

    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur
    cdef double INF = np.inf

    for j in range(m + 1):
        match[j] = 0  # 1-based rows; 0 = free

    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        for j in range(m + 1):
            minv[j] = INF
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = match[j0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1

    cdef cnp.ndarray[cnp.intp_t, ndim=1] row_of = np.empty(n, dtype=np.intp)
    for j in range(1, m + 1):
        if match[j] > 0:
            row_of[match[j] - 1] = j - 1
    rows = np.arange(n, dtype=np.intp)
    return rows, row_of


def iou_matrix(double[:, ::1] a, double[:, ::1] b):
    """Pairwise IoU of ltwh boxes: a is (n, 4), b is (m, 4); returns (n, m)."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out_arr = np.zeros((n, m))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double ax1, ay1, ax2, ay2, bx1, by1, bx2, by2
    cdef double iw, ih, inter, area_a, area_b, union

    for i in range(n):
        ax1 = a[i, 0]
        ay1 = a[i, 1]
        ax2 = ax1 + a[i, 2]
        ay2 = ay1 + a[i, 3]
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            bx1 = b[j, 0]
            by1 = b[j, 1]
            bx2 = bx1 + b[j, 2]
            by2 = by1 + b[j, 3]
            iw = min(ax2, bx2) - max(ax1, bx1)
            if iw <= 0:
                continue
            ih = min(ay2, by2) - max(ay1, by1)
            if ih <= 0:
                continue
            inter = iw * ih
            area_b = b[j, 2] * b[j, 3]
            union = area_a + area_b - inter
            if union > 0:
                out[i, j] = inter / union
    return out_arr
