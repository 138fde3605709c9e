"""Density-normalized diffusion maps over the anisotropic kernel.

Pipeline: kernel -> W = P^-1 K P^-1 -> T_hat = Q^-1/2 W Q^-1/2 ->
symmetric eigendecomposition -> harmonic-eigenvector removal ->
eigenvalue rescaling lambda_p = a_p^(1/(2 eps)) and eigenvector
conversion phi_p = Q^-1/2 v_p. Out-of-sample evaluation of the map and
its inverse uses nearest-neighbor interpolation against the fitted
reference points.
"""

import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from . import mahalanobis, sampling
from .errors import (
    DegenerateKernelError,
    HarmonicRemovalError,
    InsufficientPointsError,
    ModelStateError,
    NumericsError,
    ShapeError,
)
from .io import read_json, read_matrix_csv, write_json, write_matrix_csv

# dense solvers below this size, Lanczos iteration above
_DENSE_EIG_LIMIT = 2048


@dataclass(frozen=True)
class NormalizationChain:
    """Intermediate matrices of the density normalization."""

    P_diag: np.ndarray
    Q_diag: np.ndarray
    W: np.ndarray
    T_hat: np.ndarray

    @property
    def n(self):
        return self.T_hat.shape[0]

    def row_stochastic_error(self):
        """Max deviation of T = Q^-1 W row sums from 1."""
        sums = self.W.sum(axis=1) / self.Q_diag
        return float(np.max(np.abs(sums - 1.0)))


def normalize(kernel, overwrite=False):
    """Density normalization of a KernelMatrix.

    With overwrite=True the kernel's buffer is reused for W (the kernel
    object must not be used afterwards); T_hat is always a fresh array.
    """
    k_mat = kernel.matrix
    p_diag = k_mat.sum(axis=1)
    if p_diag.min() <= 0.0:
        raise DegenerateKernelError("kernel has a nonpositive row sum")
    w = k_mat if overwrite else k_mat.copy()
    w /= p_diag[:, None]
    w /= p_diag[None, :]
    q_diag = w.sum(axis=1)
    if q_diag.min() <= 0.0:
        raise DegenerateKernelError("normalized kernel has a nonpositive row sum")
    q_isqrt = 1.0 / np.sqrt(q_diag)
    t_hat = w * q_isqrt[:, None]
    t_hat *= q_isqrt[None, :]
    return NormalizationChain(P_diag=p_diag, Q_diag=q_diag, W=w, T_hat=t_hat)


def _fix_signs(vectors):
    """Deterministic sign convention: largest-magnitude component positive."""
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def spectral_decompose(chain, count):
    """Top eigenpairs of T_hat, eigenvalues descending, unit-norm vectors."""
    n = chain.n
    if count > n:
        raise ShapeError(f"cannot extract {count} eigenpairs from an {n}x{n} matrix")
    if count < 1:
        raise ShapeError("count must be >= 1")
    if n <= _DENSE_EIG_LIMIT:
        evals, evecs = scipy.linalg.eigh(
            chain.T_hat, subset_by_index=[n - count, n - 1]
        )
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        try:
            evals, evecs = scipy.sparse.linalg.eigsh(
                chain.T_hat, k=count, which="LA", v0=v0
            )
        except scipy.sparse.linalg.ArpackNoConvergence as exc:
            raise NumericsError(f"eigensolver did not converge: {exc}") from exc
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = _fix_signs(evecs[:, order])
    return evals, evecs


def remove_harmonics(columns, r_threshold=0.5, required=None, max_points=2000):
    """Filter repeated (harmonic) eigendirections via local linear regression.

    columns: (n, c) eigenvector/embedding columns in descending-eigenvalue
    order, column 0 being the trivial constant one (it is dropped first).
    A candidate column is kept when its normalized leave-one-out local-linear
    prediction residual computed from the already-kept columns exceeds
    r_threshold; the first nontrivial column is always kept.

    Returns (kept_indices, residuals); residuals[j] is the r statistic of
    column j (0 for the trivial column, 1 by convention for the first kept).
    """
    cols = np.asarray(columns, dtype=np.float64)
    if cols.ndim != 2 or cols.shape[1] < 2:
        raise ShapeError("need at least two columns (trivial + one candidate)")
    n, c = cols.shape
    if n > max_points:  # evenly strided, deterministic subsample
        sub = np.linspace(0, n - 1, max_points).astype(int)
        cols = cols[sub]
        n = cols.shape[0]

    residuals = np.zeros(c)
    kept = [1]
    residuals[1] = 1.0
    for j in range(2, c):
        residuals[j] = _loo_residual(cols[:, kept], cols[:, j])
        if residuals[j] > r_threshold:
            kept.append(j)
    if required is not None and len(kept) < required:
        raise HarmonicRemovalError(
            f"only {len(kept)} independent eigendirections out of {required} requested; "
            f"residuals: {np.array2string(residuals, precision=3)}"
        )
    return kept, residuals


def _loo_residual(predictors, target):
    """Normalized leave-one-out residual of kernel-weighted local linear fits."""
    n = predictors.shape[0]
    d2 = _sq_dists(predictors)
    off_diag = d2[~np.eye(n, dtype=bool)]
    med = np.median(off_diag[off_diag > 0]) if np.any(off_diag > 0) else 0.0
    if med <= 0.0:
        return 0.0  # all predictor rows identical: anything is "predictable"
    sigma2 = med / 9.0  # kernel scale: (median distance / 3)^2
    wgt = np.exp(-d2 / sigma2)
    np.fill_diagonal(wgt, 0.0)  # leave one out

    design = np.column_stack([np.ones(n), predictors])
    p1 = design.shape[1]
    outer = design[:, :, None] * design[:, None, :]  # (n, p1, p1)
    normal = (wgt @ outer.reshape(n, p1 * p1)).reshape(n, p1, p1)
    rhs = wgt @ (design * target[:, None])
    normal += 1e-12 * np.trace(normal, axis1=1, axis2=2)[:, None, None] * np.eye(p1)
    try:
        coef = np.linalg.solve(normal, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        coef = np.stack([np.linalg.lstsq(normal[i], rhs[i], rcond=None)[0] for i in range(n)])
    pred = np.einsum("ik,ik->i", design, coef)
    denom = float(target @ target)
    if denom <= 0.0:
        return 0.0
    return float(np.sqrt(np.sum((target - pred) ** 2) / denom))


@dataclass(frozen=True)
class DiffusionMapModel:
    """Fitted spectral model providing the map and its inverse."""

    reference_points: np.ndarray  # (n, m) observed points used for fitting
    embedding: np.ndarray  # (n, ell) kept eigenvector columns phi_p
    eigenvalues: np.ndarray  # (ell,) rescaled lambda_p, descending
    epsilon: float
    kept_indices: tuple
    transition_eigenvalues: np.ndarray = None  # kept a_p of T_hat
    harmonic_residuals: np.ndarray = None
    scaled_by_eigenvalues: bool = False

    def __post_init__(self):
        refs = np.array(self.reference_points, dtype=np.float64)
        emb = np.array(self.embedding, dtype=np.float64)
        lam = np.array(self.eigenvalues, dtype=np.float64)
        if refs.ndim != 2 or emb.ndim != 2 or refs.shape[0] != emb.shape[0]:
            raise ShapeError("reference points and embedding must have matching rows")
        if emb.shape[1] != lam.size or len(self.kept_indices) != lam.size:
            raise ShapeError("eigenvalue/embedding column counts disagree")
        if refs.shape[0] < emb.shape[1]:
            raise ShapeError("need at least as many points as embedding dimensions")
        if lam.size and (np.any(np.diff(lam) > 1e-12) or lam[0] > 1.0 + 1e-12 or lam[-1] <= 0.0):
            raise ShapeError("eigenvalues must be descending and within (0, 1]")
        if np.any(np.linalg.norm(emb, axis=0) == 0.0):
            raise ShapeError("embedding has a zero column")
        for arr in (refs, emb, lam):
            arr.flags.writeable = False
        object.__setattr__(self, "reference_points", refs)
        object.__setattr__(self, "embedding", emb)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "kept_indices", tuple(int(i) for i in self.kept_indices))

    @property
    def n(self):
        return self.reference_points.shape[0]

    @property
    def ell(self):
        return self.embedding.shape[1]


def _sq_dists(points, queries=None):
    """Squared Euclidean distances; (len(queries), len(points))."""
    pts = np.atleast_2d(points)
    qs = pts if queries is None else np.atleast_2d(queries)
    d2 = (
        np.sum(qs * qs, axis=1)[:, None]
        + np.sum(pts * pts, axis=1)[None, :]
        - 2.0 * qs @ pts.T
    )
    return np.maximum(d2, 0.0)


def _nearest_index(points, queries):
    """Index of the nearest row of points per query; ties break to lowest index."""
    return np.argmin(_sq_dists(points, queries), axis=1)


def fit(
    data,
    ell,
    k=10,
    epsilon=None,
    harmonic_removal=True,
    r_threshold=0.5,
    rcond=mahalanobis.DEFAULT_RCOND,
    max_rank=None,
    base_points="means",
    scale_by_eigenvalues=False,
    n_candidates=None,
):
    """Fit a diffusion map.

    data: either a sampling.NeighborhoodSet (covariances estimated per cloud)
    or a tuple (points, covariance_estimates). ell is the number of kept
    eigenvector coordinates. epsilon overrides the k-th-neighbor median
    bandwidth rule. With harmonic_removal=False the first ell nontrivial
    eigenvectors are kept as-is. base_points selects "means" (cloud sample
    means) or "centers" as kernel evaluation points for neighborhood input.
    """
    if ell < 1:
        raise ShapeError("ell must be >= 1")
    stage = "covariance"
    try:
        if isinstance(data, sampling.NeighborhoodSet):
            estimates = mahalanobis.covariances_from_neighborhoods(data, rcond, max_rank)
            points = data.empirical_means() if base_points == "means" else data.base_points
        else:
            points, estimates = data
            points = np.asarray(points, dtype=np.float64)
            if points.ndim == 1:
                points = points[:, None]
        n = points.shape[0]
        if len(estimates) != n:
            raise ShapeError("need one covariance estimate per point")
        if n <= max(ell, k):
            raise InsufficientPointsError(
                f"need more than max(ell, k)={max(ell, k)} points, got {n}"
            )
        pinvs = mahalanobis.pinv_stack(estimates)

        stage = "distances"
        d2 = mahalanobis.pairwise_mahalanobis_sq(points, pinvs)

        stage = "bandwidth"
        eps = float(epsilon) if epsilon is not None else mahalanobis.select_bandwidth(d2, k)

        stage = "kernel"
        kernel = mahalanobis.kernel_from_distances(d2, eps, overwrite=True)
        del d2

        stage = "normalize"
        chain = normalize(kernel, overwrite=True)
        del kernel

        stage = "eigensolve"
        if n_candidates is None:
            n_candidates = max(2 * ell + 2, ell + 6) if harmonic_removal else ell
        count = min(n, n_candidates + 1)  # +1 for the trivial eigenvector
        evals, evecs = spectral_decompose(chain, count)
        phi = evecs / np.sqrt(chain.Q_diag)[:, None]

        stage = "harmonic-removal"
        if harmonic_removal:
            kept_all, residuals = remove_harmonics(phi, r_threshold, required=ell)
        else:
            kept_all, residuals = list(range(1, count)), None
        if len(kept_all) < ell:
            raise HarmonicRemovalError(
                f"only {len(kept_all)} usable eigenvectors for requested ell={ell}"
            )
        kept = kept_all[:ell]

        stage = "rescale"
        a_kept = evals[kept]
        if np.any(a_kept <= 0.0):
            raise NumericsError("kept transition eigenvalue is nonpositive")
        a_kept = np.minimum(a_kept, 1.0)
        lam = a_kept ** (1.0 / (2.0 * eps))
        embedding = phi[:, kept]
        if scale_by_eigenvalues:
            embedding = embedding * lam[None, :]
        return DiffusionMapModel(
            reference_points=points,
            embedding=embedding,
            eigenvalues=lam,
            epsilon=eps,
            kept_indices=tuple(kept),
            transition_eigenvalues=a_kept,
            harmonic_residuals=residuals,
            scaled_by_eigenvalues=scale_by_eigenvalues,
        )
    except Exception as exc:
        if not getattr(exc, "_stage_tagged", False):
            exc._stage_tagged = True
            exc.args = (f"[{stage}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def embed(model, y):
    """Map observed point(s) to embedding coordinates (nearest-reference rows)."""
    if model.n == 0:
        raise ModelStateError("model has no reference points")
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    idx = _nearest_index(model.reference_points, y[None, :] if single else y)
    out = model.embedding[idx]
    return out[0] if single else out


def inverse_embed(model, z):
    """Map embedding coordinate(s) back to the nearest reference point."""
    if model.n == 0:
        raise ModelStateError("model has no reference points")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    idx = _nearest_index(model.embedding, z[None, :] if single else z)
    out = model.reference_points[idx]
    return out[0] if single else out


def embed_index(model, y):
    """Index of the nearest reference point (ties to lowest index)."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    idx = _nearest_index(model.reference_points, y[None, :] if single else y)
    return int(idx[0]) if single else idx


def save_model(directory, model):
    """Model directory: manifest.json + reference_points.csv + embedding.csv."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": "dmapalign.dmap",
        "version": 1,
        "n": int(model.n),
        "m": int(model.reference_points.shape[1]),
        "ell": int(model.ell),
        "epsilon": float(model.epsilon),
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "kept_indices": list(model.kept_indices),
        "scaled_by_eigenvalues": bool(model.scaled_by_eigenvalues),
    }
    if model.transition_eigenvalues is not None:
        manifest["transition_eigenvalues"] = [float(v) for v in model.transition_eigenvalues]
    if model.harmonic_residuals is not None:
        manifest["harmonic_residuals"] = [float(v) for v in model.harmonic_residuals]
    write_json(os.path.join(directory, "manifest.json"), manifest)
    write_matrix_csv(os.path.join(directory, "reference_points.csv"), model.reference_points)
    write_matrix_csv(os.path.join(directory, "embedding.csv"), model.embedding)


def load_model(directory):
    manifest = read_json(os.path.join(directory, "manifest.json"))
    refs, _ = read_matrix_csv(os.path.join(directory, "reference_points.csv"))
    emb, _ = read_matrix_csv(os.path.join(directory, "embedding.csv"))
    trans = manifest.get("transition_eigenvalues")
    resid = manifest.get("harmonic_residuals")
    return DiffusionMapModel(
        reference_points=refs,
        embedding=emb,
        eigenvalues=np.asarray(manifest["eigenvalues"]),
        epsilon=float(manifest["epsilon"]),
        kept_indices=tuple(manifest["kept_indices"]),
        transition_eigenvalues=None if trans is None else np.asarray(trans),
        harmonic_residuals=None if resid is None else np.asarray(resid),
        scaled_by_eigenvalues=bool(manifest.get("scaled_by_eigenvalues", False)),
    )
