"""Datasets and per-point neighborhoods: the observation process.

Neighborhoods are small point clouds around base points; their covariances
feed the anisotropic kernel. Clouds can be generated as delta-balls, pushed
through a closed-form diffeomorphism, or mapped through network taps.
All generators are deterministic per seed.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DomainError, ShapeError, SpecError
from .io import read_json, read_matrix_csv, write_json, write_matrix_csv


def _as_domain(domain):
    """Normalize a domain descriptor to a tuple of (lo, hi) pairs."""
    arr = np.asarray(domain, dtype=np.float64)
    if arr.ndim == 1 and arr.shape == (2,):
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("domain must be (lo, hi) or a sequence of (lo, hi) pairs")
    return tuple((float(lo), float(hi)) for lo, hi in arr)


@dataclass(frozen=True)
class Dataset:
    """Points sampled inside a rectangular domain."""

    points: np.ndarray  # (n, k)
    domain: tuple  # of (lo, hi) pairs
    seed: int

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "domain", _as_domain(self.domain))
        if pts.shape[1] != len(self.domain):
            raise ShapeError("point dimension does not match domain")
        for j, (lo, hi) in enumerate(self.domain):
            col = pts[:, j]
            if col.size and (col.min() < lo or col.max() > hi):
                raise DomainError(f"points leave the declared domain in axis {j}")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def sample_uniform(domain, n, seed):
    """n i.i.d. uniform points in a rectangular domain, deterministic per seed."""
    domain = _as_domain(domain)
    if n < 1:
        raise ShapeError("n must be >= 1")
    for lo, hi in domain:
        if not hi > lo:
            raise DomainError(f"degenerate domain side ({lo}, {hi})")
    rng = np.random.default_rng(seed)
    lows = np.array([lo for lo, _ in domain])
    highs = np.array([hi for _, hi in domain])
    pts = rng.uniform(lows, highs, size=(n, len(domain)))
    return Dataset(points=pts, domain=domain, seed=int(seed))


@dataclass(frozen=True)
class NeighborhoodSet:
    """n clouds of q points each, plus their generating base points.

    base_points are the generating centers; empirical_means() gives the
    per-cloud sample means used as kernel evaluation points.
    """

    clouds: np.ndarray  # (n, q, m)
    base_points: np.ndarray  # (n, m)
    seed: int = 0
    generator: str = ""

    def __post_init__(self):
        clouds = np.array(self.clouds, dtype=np.float64)
        base = np.array(self.base_points, dtype=np.float64)
        if base.ndim == 1:
            base = base[:, None]
        if clouds.ndim != 3:
            raise ShapeError("clouds must be a (n, q, m) array")
        if clouds.shape[0] != base.shape[0] or clouds.shape[2] != base.shape[1]:
            raise ShapeError("clouds and base_points disagree on n or m")
        if clouds.shape[1] < 2:
            raise ShapeError("need q >= 2 points per neighborhood")
        clouds.flags.writeable = False
        base.flags.writeable = False
        object.__setattr__(self, "clouds", clouds)
        object.__setattr__(self, "base_points", base)

    @property
    def n(self):
        return self.clouds.shape[0]

    @property
    def q(self):
        return self.clouds.shape[1]

    @property
    def m(self):
        return self.clouds.shape[2]

    def empirical_means(self):
        return self.clouds.mean(axis=1)


def _uniform_ball(rng, center, delta, q):
    """Uniform samples in the delta-ball around center (any dimension)."""
    k = center.shape[0]
    direction = rng.normal(size=(q, k))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = delta * rng.uniform(size=(q, 1)) ** (1.0 / k)
    return center + direction * radius


def delta_ball_neighborhoods(data, delta, q, seed):
    """q uniform samples in the delta-ball around every dataset point.

    Balls near the domain boundary are not clipped; clipping would bias
    the covariances anisotropically.
    """
    if q < 2:
        raise ShapeError("need q >= 2 points per neighborhood")
    if delta < 0:
        raise DomainError("delta must be nonnegative")
    rng = np.random.default_rng(seed)
    pts = data.points
    clouds = np.empty((pts.shape[0], q, pts.shape[1]))
    for i, center in enumerate(pts):
        clouds[i] = _uniform_ball(rng, center, delta, q)
    return NeighborhoodSet(
        clouds=clouds,
        base_points=pts,
        seed=int(seed),
        generator=f"delta_ball(delta={delta!r}, q={q})",
    )


MAP_IDS = ("identity", "s_section42", "s_section43")


@dataclass(frozen=True)
class DiffeomorphismSpec:
    """A closed-form forward map between input domains."""

    map_id: str
    alpha: float = 20.0
    beta: float = 10.0

    def __post_init__(self):
        if self.map_id not in MAP_IDS:
            raise SpecError(f"unknown map id {self.map_id!r}")

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        if self.map_id == "identity":
            out = pts.copy()
        elif self.map_id == "s_section42":
            if pts.shape[1] != 1:
                raise ShapeError("s_section42 is a map on 1-D points")
            x = pts[:, 0]
            out = (2.0 + 2.0 * x + np.sin(4.0 * math.pi * x) / (3.0 * math.pi))[:, None]
        else:  # s_section43
            if pts.shape[1] != 2:
                raise ShapeError("s_section43 is a map on 2-D points")
            x1, x2 = pts[:, 0], pts[:, 1]
            common = x1**2 / self.alpha**2 + x2 / self.beta
            out = np.column_stack([x1 / self.alpha + common, common])
        return out[0] if single else out

    def jacobian(self, points):
        """Forward-map Jacobians; (n, k, k) for a batch, (k, k) for one point."""
        pts = np.asarray(points, dtype=np.float64)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        n = pts.shape[0]
        if self.map_id == "identity":
            jac = np.broadcast_to(np.eye(pts.shape[1]), (n, pts.shape[1], pts.shape[1])).copy()
        elif self.map_id == "s_section42":
            d = 2.0 + (4.0 / 3.0) * np.cos(4.0 * math.pi * pts[:, 0])
            jac = d[:, None, None]
        else:
            x1 = pts[:, 0]
            jac = np.empty((n, 2, 2))
            jac[:, 0, 0] = 1.0 / self.alpha + 2.0 * x1 / self.alpha**2
            jac[:, 0, 1] = 1.0 / self.beta
            jac[:, 1, 0] = 2.0 * x1 / self.alpha**2
            jac[:, 1, 1] = 1.0 / self.beta
        return jac[0] if single else jac

    def check_injective(self, domain, grid_per_axis=60):
        """Numerical injectivity check on a regular grid over the domain."""
        from scipy.spatial import cKDTree

        domain = _as_domain(domain)
        axes = [np.linspace(lo, hi, grid_per_axis) for lo, hi in domain]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.column_stack([m.ravel() for m in mesh])
        images = self.apply(grid)
        tree = cKDTree(images)
        dist, _ = tree.query(images, k=2)
        return bool(dist[:, 1].min() > 0.0)


def pushforward_neighborhoods(nbhds, diffeo):
    """Map every cloud point and base point through the forward map."""
    n, q, m = nbhds.clouds.shape
    flat = nbhds.clouds.reshape(n * q, m)
    mapped = diffeo.apply(flat)
    return NeighborhoodSet(
        clouds=mapped.reshape(n, q, -1),
        base_points=diffeo.apply(nbhds.base_points),
        seed=nbhds.seed,
        generator=f"{nbhds.generator} |> {diffeo.map_id}",
    )


def evaluate_neighborhoods(nbhds, net, taps):
    """Observe every cloud through the network's tapped neurons (m becomes ell)."""
    n, q, m = nbhds.clouds.shape
    if m != net.spec.n_inputs:
        raise ShapeError(
            f"cloud point dimension {m} != network input dimension {net.spec.n_inputs}"
        )
    flat = nbhds.clouds.reshape(n * q, m)
    observed = nn.forward_with_taps(net, taps, flat)
    return NeighborhoodSet(
        clouds=observed.reshape(n, q, taps.ell),
        base_points=nn.forward_with_taps(net, taps, nbhds.base_points),
        seed=nbhds.seed,
        generator=f"{nbhds.generator} |> taps{taps.neuron_ids}",
    )


def save_neighborhoods(directory, nbhds):
    """Directory layout: manifest.json, base_points.csv, clouds/cloud_#####.csv."""
    os.makedirs(directory, exist_ok=True)
    clouds_dir = os.path.join(directory, "clouds")
    os.makedirs(clouds_dir, exist_ok=True)
    write_json(
        os.path.join(directory, "manifest.json"),
        {
            "format": "dmapalign.neighborhoods",
            "version": 1,
            "n": int(nbhds.n),
            "q": int(nbhds.q),
            "m": int(nbhds.m),
            "seed": int(nbhds.seed),
            "generator": nbhds.generator,
        },
    )
    write_matrix_csv(os.path.join(directory, "base_points.csv"), nbhds.base_points)
    for i in range(nbhds.n):
        write_matrix_csv(os.path.join(clouds_dir, f"cloud_{i:05d}.csv"), nbhds.clouds[i])


def load_neighborhoods(directory):
    manifest = read_json(os.path.join(directory, "manifest.json"))
    base, _ = read_matrix_csv(os.path.join(directory, "base_points.csv"))
    n, q, m = manifest["n"], manifest["q"], manifest["m"]
    clouds = np.empty((n, q, m))
    for i in range(n):
        cloud, _ = read_matrix_csv(os.path.join(directory, "clouds", f"cloud_{i:05d}.csv"))
        clouds[i] = cloud
    return NeighborhoodSet(
        clouds=clouds,
        base_points=base,
        seed=int(manifest["seed"]),
        generator=manifest.get("generator", ""),
    )
