"""Orthogonal alignment between two spectral embeddings.

The two embeddings of consistently observed data agree up to an element of
O(ell); a handful of corresponding points determine it. Reflections are
allowed on purpose: the one-dimensional case is a sign flip.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .io import read_json, write_json


@dataclass(frozen=True)
class OrthogonalMap:
    """An ell x ell orthogonal matrix with its fit residual."""

    matrix: np.ndarray
    residual: float
    correspondences_used: int

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ShapeError("orthogonal map must be square")
        ell = mat.shape[0]
        if np.max(np.abs(mat.T @ mat - np.eye(ell))) > 1e-10:
            raise ShapeError("matrix is not orthogonal to 1e-10")
        if abs(abs(np.linalg.det(mat)) - 1.0) > 1e-10:
            raise ShapeError("determinant is not +-1 to 1e-10")
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @property
    def ell(self):
        return self.matrix.shape[0]

    def apply(self, z):
        """O z for a vector, or row-wise for a matrix; norm-preserving."""
        z = np.asarray(z, dtype=np.float64)
        return z @ self.matrix.T

    def apply_inverse(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z @ self.matrix

    def transpose(self):
        return OrthogonalMap(
            matrix=self.matrix.T.copy(),
            residual=self.residual,
            correspondences_used=self.correspondences_used,
        )


def kabsch_align(a, b):
    """Orthogonal map O minimizing sum ||O a_i - b_i||^2 (no centering, no
    reflection suppression).

    a, b: (p, ell) matrices of corresponding points. O = U V^T from the SVD
    of B^T A. Warns when fewer than ell generic correspondences are supplied
    or the cross-covariance is rank deficient (solution then not unique).
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ShapeError("correspondence sets must have equal shape")
    p, ell = a.shape
    if p < 1:
        raise ShapeError("need at least one correspondence")
    if p < ell:
        warnings.warn(f"only {p} correspondences for an {ell}-dimensional map; solution not unique")
    cross = b.T @ a
    u, s, vt = np.linalg.svd(cross)
    rank = int(np.sum(s > (s[0] * 1e-12 if s[0] > 0 else 0.0))) if s.size else 0
    if rank < ell:
        warnings.warn(f"cross-covariance rank {rank} < {ell}; orthogonal map is ambiguous")
    o_mat = u @ vt
    resid = a @ o_mat.T - b
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return OrthogonalMap(matrix=o_mat, residual=rms, correspondences_used=p)


def save_orthogonal_map(path, omap):
    write_json(
        path,
        {
            "format": "dmapalign.orthogonal_map",
            "version": 1,
            "matrix": omap.matrix.tolist(),
            "residual": float(omap.residual),
            "correspondences_used": int(omap.correspondences_used),
        },
    )


def load_orthogonal_map(path):
    doc = read_json(path)
    return OrthogonalMap(
        matrix=np.asarray(doc["matrix"], dtype=np.float64),
        residual=float(doc["residual"]),
        correspondences_used=int(doc["correspondences_used"]),
    )
