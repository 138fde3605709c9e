"""Local covariances and the anisotropic (Mahalanobis-style) kernel.

Each observed point carries the pseudoinverse of its local covariance; the
squared distance between points i and j is

    d2(i, j) = (y_i - y_j)^T (P_i + P_j) (y_i - y_j).

With covariances estimated from consistently sampled neighborhoods this
distance undoes the distortion of the observation map, which is what makes
embeddings of differently observed copies of the same manifold agree up to
an orthogonal transformation.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._core import pairwise_quadratic_sq
from .errors import (
    DegenerateKernelError,
    InsufficientPointsError,
    NumericalPSDError,
    ShapeError,
)
from .io import read_json, write_json, write_matrix_csv

DEFAULT_RCOND = 1e-8


@dataclass(frozen=True)
class CovarianceEstimate:
    """A local covariance, its Moore-Penrose pseudoinverse and rank."""

    covariance: np.ndarray
    pseudoinverse: np.ndarray
    rank: int
    source: str  # "empirical" | "analytic_jacobian"
    degenerate: bool = False

    def __post_init__(self):
        cov = np.array(self.covariance, dtype=np.float64)
        pinv = np.array(self.pseudoinverse, dtype=np.float64)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or pinv.shape != cov.shape:
            raise ShapeError("covariance and pseudoinverse must be square and equal-shaped")
        cov.flags.writeable = False
        pinv.flags.writeable = False
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "pseudoinverse", pinv)

    @property
    def dim(self):
        return self.covariance.shape[0]


def _estimate_from_eigh(cov, rcond, max_rank, source):
    """Build a CovarianceEstimate from a symmetric matrix via eigendecomposition."""
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    top = float(evals[-1]) if evals.size else 0.0
    scale = float(np.max(np.abs(evals))) if evals.size else 0.0
    if evals.size and evals[0] < -1e-10 * max(scale, 1e-300):
        raise NumericalPSDError(
            f"covariance has negative eigenvalue {evals[0]:.3e} (scale {scale:.3e})"
        )
    if top <= 0.0:
        m = cov.shape[0]
        return CovarianceEstimate(
            covariance=np.zeros((m, m)),
            pseudoinverse=np.zeros((m, m)),
            rank=0,
            source=source,
            degenerate=True,
        )
    tol = rcond * top
    keep = evals > tol
    if max_rank is not None and keep.sum() > max_rank:
        # keep only the max_rank largest eigenvalues (eigh sorts ascending)
        keep = np.zeros_like(keep)
        keep[-max_rank:] = True
        truncated = True
    else:
        truncated = False
    rank = int(keep.sum())
    vec = evecs[:, keep]
    val = evals[keep]
    pinv = (vec / val) @ vec.T
    if truncated:
        cov = (vec * val) @ vec.T
    return CovarianceEstimate(
        covariance=cov,
        pseudoinverse=0.5 * (pinv + pinv.T),
        rank=rank,
        source=source,
        degenerate=rank == 0,
    )


def estimate_from_covariance(cov, rcond=DEFAULT_RCOND, max_rank=None, source="empirical"):
    """Wrap an externally supplied covariance matrix in a CovarianceEstimate."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ShapeError("covariance must be a square matrix")
    return _estimate_from_eigh(cov, rcond, max_rank, source)


def empirical_covariance(cloud, rcond=DEFAULT_RCOND, max_rank=None):
    """Unbiased sample covariance of one cloud with a thresholded pseudoinverse.

    max_rank truncates the estimate to the given rank (largest eigenvalues
    kept); use it when the intrinsic dimension of the sampled manifold is
    known and curvature would otherwise leak into the pseudoinverse.
    """
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2:
        raise ShapeError("cloud must be a (q, m) matrix")
    q = cloud.shape[0]
    if q < 2:
        raise ShapeError("covariance needs at least 2 points")
    centered = cloud - cloud.mean(axis=0)
    cov = centered.T @ centered / (q - 1)
    return _estimate_from_eigh(cov, rcond, max_rank, "empirical")


def analytic_covariance(jac, rcond=DEFAULT_RCOND):
    """Covariance surrogate J J^T from an observation-map Jacobian J (ell x d)."""
    jac = np.asarray(jac, dtype=np.float64)
    if jac.ndim != 2:
        raise ShapeError("Jacobian must be a 2-D matrix")
    if not np.all(np.isfinite(jac)):
        raise ShapeError("Jacobian contains non-finite entries")
    u, s, _ = np.linalg.svd(jac, full_matrices=False)
    cov = (u * s**2) @ u.T
    s2 = s**2
    top = float(s2[0]) if s2.size else 0.0
    if top <= 0.0:
        m = jac.shape[0]
        return CovarianceEstimate(
            covariance=np.zeros((m, m)),
            pseudoinverse=np.zeros((m, m)),
            rank=0,
            source="analytic_jacobian",
            degenerate=True,
        )
    keep = s2 > rcond * top
    vec = u[:, keep]
    pinv = (vec / s2[keep]) @ vec.T
    return CovarianceEstimate(
        covariance=0.5 * (cov + cov.T),
        pseudoinverse=0.5 * (pinv + pinv.T),
        rank=int(keep.sum()),
        source="analytic_jacobian",
        degenerate=not keep.any(),
    )


def covariances_from_neighborhoods(nbhds, rcond=DEFAULT_RCOND, max_rank=None):
    """One empirical CovarianceEstimate per cloud."""
    return [empirical_covariance(nbhds.clouds[i], rcond, max_rank) for i in range(nbhds.n)]


def pinv_stack(estimates):
    """Stack pseudoinverses of CovarianceEstimates into an (n, m, m) array."""
    if not estimates:
        raise ShapeError("no covariance estimates given")
    degenerate = [i for i, e in enumerate(estimates) if e.degenerate]
    if degenerate:
        warnings.warn(f"{len(degenerate)} degenerate covariance estimates (first: {degenerate[0]})")
    return np.ascontiguousarray([e.pseudoinverse for e in estimates])


def identity_pinvs(n, m):
    """Identity pseudoinverses: reduces the kernel to the Euclidean one."""
    return np.ascontiguousarray(np.broadcast_to(np.eye(m), (n, m, m)))


def mahalanobis_sq(y_i, y_j, p_i, p_j):
    """(y_i - y_j)^T (P_i + P_j) (y_i - y_j); symmetric in (i, j), >= 0."""
    y_i = np.asarray(y_i, dtype=np.float64)
    y_j = np.asarray(y_j, dtype=np.float64)
    if y_i.shape != y_j.shape or y_i.ndim != 1:
        raise ShapeError("points must be equal-length vectors")
    p_i = np.asarray(p_i, dtype=np.float64)
    p_j = np.asarray(p_j, dtype=np.float64)
    if p_i.shape != (y_i.size, y_i.size) or p_j.shape != p_i.shape:
        raise ShapeError("pseudoinverse shapes do not match the points")
    diff = y_i - y_j
    val = float(diff @ (p_i + p_j) @ diff)
    if val < -1e-12:
        raise NumericalPSDError(f"quadratic form came out negative: {val:.3e}")
    return max(val, 0.0)


def pairwise_mahalanobis_sq(points, pinvs):
    """Dense (n, n) matrix of the anisotropic squared distances (compiled core)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    pinvs = np.ascontiguousarray(pinvs, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError("points must be a (n, m) matrix")
    return pairwise_quadratic_sq(points, pinvs)


def select_bandwidth(distances_sq, k=10):
    """Median over points of the squared distance to the k-th nearest neighbor.

    distances_sq is the dense all-pairs matrix (diagonal zero); the k-th
    nearest neighbor excludes the point itself.
    """
    d2 = np.asarray(distances_sq, dtype=np.float64)
    if d2.ndim != 2 or d2.shape[0] != d2.shape[1]:
        raise ShapeError("distances_sq must be a square matrix")
    n = d2.shape[0]
    if n <= k:
        raise InsufficientPointsError(f"need more than k={k} points, got {n}")
    kth = np.empty(n)
    block = 1024
    for start in range(0, n, block):
        stop = min(start + block, n)
        # position k of a sorted row is the k-th neighbor (position 0 is self)
        kth[start:stop] = np.partition(d2[start:stop], k, axis=1)[:, k]
    eps = float(np.median(kth))
    if eps <= 0.0:
        raise DegenerateKernelError("k-th neighbor distances are zero; bandwidth undefined")
    return eps


@dataclass(frozen=True)
class KernelMatrix:
    """Dense symmetric kernel with unit diagonal and its bandwidth.

    Entries are exp(-d2/(2 eps)) in [0, 1]; entries for very distant pairs can
    underflow to exact 0 in float64.
    """

    matrix: np.ndarray
    epsilon: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError("kernel must be square")
        if self.epsilon <= 0:
            raise ShapeError("bandwidth must be positive")
        object.__setattr__(self, "matrix", m)

    @property
    def n(self):
        return self.matrix.shape[0]

    def validate(self, atol=1e-12):
        """Full invariant check (O(n^2); used by tests, not the hot path)."""
        m = self.matrix
        assert np.allclose(m, m.T, atol=atol), "kernel not symmetric"
        assert np.allclose(np.diag(m), 1.0, atol=atol), "diagonal not 1"
        assert m.min() >= 0.0 and m.max() <= 1.0 + atol, "entries outside [0, 1]"


def kernel_from_distances(distances_sq, epsilon, overwrite=False):
    """K = exp(-d2 / (2 eps)). With overwrite=True the input buffer is reused."""
    d2 = np.asarray(distances_sq, dtype=np.float64)
    if epsilon <= 0:
        raise ShapeError("bandwidth must be positive")
    if not np.all(np.isfinite(d2)):
        i, j = np.argwhere(~np.isfinite(d2))[0]
        raise NumericalPSDError(f"non-finite distance between points {i} and {j}")
    out = d2 if overwrite else d2.copy()
    out *= -1.0 / (2.0 * epsilon)
    np.exp(out, out=out)
    np.fill_diagonal(out, 1.0)
    return KernelMatrix(matrix=out, epsilon=float(epsilon))


def kernel_matrix(points, pinvs, epsilon):
    """Assemble the kernel for given points, pseudoinverses and bandwidth."""
    d2 = pairwise_mahalanobis_sq(points, pinvs)
    return kernel_from_distances(d2, epsilon, overwrite=True)


def save_kernel_csv(path, kernel):
    write_matrix_csv(path, kernel.matrix)


def save_kernel_binary(path, kernel):
    """Raw row-major float64 dump plus a JSON header at <path>.json."""
    kernel.matrix.astype(np.float64).tofile(path)
    write_json(
        str(path) + ".json",
        {
            "format": "dmapalign.kernel",
            "version": 1,
            "n": int(kernel.n),
            "epsilon": float(kernel.epsilon),
            "dtype": "float64",
            "order": "C",
        },
    )


def load_kernel_binary(path):
    header = read_json(str(path) + ".json")
    n = int(header["n"])
    mat = np.fromfile(path, dtype=np.float64).reshape(n, n)
    return KernelMatrix(matrix=mat, epsilon=float(header["epsilon"]))
