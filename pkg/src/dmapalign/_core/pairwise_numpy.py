"""Pure-NumPy fallback for the pairwise distance core.

Row-at-a-time evaluation of the half-forms q_i(j) = (y_j - y_i)^T P_i (y_j - y_i);
the symmetric distance is q_i(j) + q_j(i). Same contract as the compiled
version in ``_pairwise.pyx``.
"""

import numpy as np


def pairwise_quadratic_sq(points, pinvs):
    """D[i, j] = (y_i - y_j)^T (P_i + P_j) (y_i - y_j), dense symmetric."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    pinvs = np.ascontiguousarray(pinvs, dtype=np.float64)
    n, m = points.shape
    if pinvs.shape != (n, m, m):
        raise ValueError("pinvs must have shape (n, m, m) matching points")

    half = np.empty((n, n), dtype=np.float64)
    diff = np.empty_like(points)
    proj = np.empty_like(points)
    for i in range(n):
        np.subtract(points, points[i], out=diff)
        np.dot(diff, pinvs[i], out=proj)
        proj *= diff
        half[i] = proj.sum(axis=1)
    dist = half + half.T
    np.fill_diagonal(dist, 0.0)
    np.maximum(dist, 0.0, out=dist)
    return dist
