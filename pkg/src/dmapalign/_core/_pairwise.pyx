# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop: dense pairwise anisotropic squared distances.

This is the only O(n^2 m^2) loop in the pipeline and dominates runtime for
large point sets, hence the compiled implementation.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def pairwise_quadratic_sq(const double[:, ::1] points, const double[:, :, ::1] pinvs):
    """D[i, j] = (y_i - y_j)^T (P_i + P_j) (y_i - y_j).

    points: (n, m) C-contiguous float64.
    pinvs:  (n, m, m) C-contiguous float64, symmetric PSD per slice.
    Returns a dense symmetric (n, n) float64 array with zero diagonal.
    Small negative round-off values are clamped to zero.
    """
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = points.shape[1]
    if pinvs.shape[0] != n or pinvs.shape[1] != m or pinvs.shape[2] != m:
        raise ValueError("pinvs must have shape (n, m, m) matching points")

    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] D = out
    diff_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] diff = diff_arr

    cdef Py_ssize_t i, j, a, b
    cdef double acc, row, da

    for i in range(n):
        for j in range(i + 1, n):
            for a in range(m):
                diff[a] = points[i, a] - points[j, a]
            acc = 0.0
            for a in range(m):
                da = diff[a]
                row = 0.0
                for b in range(m):
                    row = row + (pinvs[i, a, b] + pinvs[j, a, b]) * diff[b]
                acc = acc + da * row
            if acc < 0.0:
                acc = 0.0
            D[i, j] = acc
            D[j, i] = acc
    return out
