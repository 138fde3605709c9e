"""The composed network-to-network transformation and its diagnostics.

T carries tap activations of network 1 to tap activations of network 2 by
going through both spectral embeddings: embed with the first model, rotate
with the orthogonal alignment, invert the second model. The fold detector
probes where one network's observables stop being an invertible function of
the other's along a one-dimensional sweep.
"""

import hashlib
import os
import warnings
from dataclasses import dataclass

import numpy as np

from . import align as align_mod
from . import dmap, nn, sampling
from .errors import AlignmentError, InsufficientProbeError, ShapeError
from .io import read_json, write_json


@dataclass(frozen=True)
class NetworkTransform:
    """T = psi^-1 o O o phi between two networks' tap spaces."""

    phi: dmap.DiffusionMapModel
    psi: dmap.DiffusionMapModel
    omap: align_mod.OrthogonalMap
    taps1: nn.TapSelection
    taps2: nn.TapSelection
    provenance: str = ""
    interpolation: str = "nearest"  # "nearest" | "linear1d" (psi/phi inversion)

    def __post_init__(self):
        if self.phi.ell != self.psi.ell or self.omap.ell != self.phi.ell:
            raise ShapeError("phi, psi and O must share the embedding dimension")
        if self.interpolation not in ("nearest", "linear1d"):
            raise ShapeError(f"unknown interpolation {self.interpolation!r}")
        if self.interpolation == "linear1d" and self.phi.ell != 1:
            raise ShapeError("linear1d interpolation requires a 1-D embedding")

    @property
    def ell(self):
        return self.phi.ell


def _embedding_means_ok(model):
    emb = model.embedding
    std = emb.std(axis=0)
    means = np.abs(emb.mean(axis=0))
    return bool(np.all(means <= 0.5 * (std + 1e-300)))


def build_transform(
    net1,
    taps1,
    net2,
    taps2,
    nbhds1,
    nbhds2,
    ell,
    correspondences=None,
    intrinsic_dim=1,
    **fit_kwargs,
):
    """Fit both embeddings, estimate the orthogonal alignment, compose T.

    nbhds1/nbhds2 are input-space NeighborhoodSets with matched ordering
    (cloud i of both sets observes the same underlying location). Extra
    keyword arguments go to dmap.fit. correspondences: indices of matched
    points used for the alignment (default: the first max(ell, 10)).
    """
    if nbhds1.n != nbhds2.n and correspondences is None:
        raise AlignmentError(
            "neighborhood sets differ in size and no explicit correspondences given"
        )
    if ell < 2 * intrinsic_dim + 1:
        warnings.warn(
            f"embedding dimension ell={ell} is below the generic-embedding bound "
            f"2d+1={2 * intrinsic_dim + 1} for intrinsic dimension {intrinsic_dim}"
        )
    nn.check_whitney(net1.spec, taps1, intrinsic_dim)
    nn.check_whitney(net2.spec, taps2, intrinsic_dim)

    tap_set1 = sampling.evaluate_neighborhoods(nbhds1, net1, taps1)
    tap_set2 = sampling.evaluate_neighborhoods(nbhds2, net2, taps2)
    interpolation = fit_kwargs.pop("interpolation", "nearest")
    phi = dmap.fit(tap_set1, ell, **fit_kwargs)
    psi = dmap.fit(tap_set2, ell, **fit_kwargs)

    if correspondences is None:
        p = min(max(ell, 10), phi.n, psi.n)
        idx1 = idx2 = np.arange(p)
    else:
        corr = np.asarray(correspondences, dtype=int)
        if corr.ndim == 1:
            idx1 = idx2 = corr
        elif corr.ndim == 2 and corr.shape[1] == 2:
            idx1, idx2 = corr[:, 0], corr[:, 1]
        else:
            raise AlignmentError("correspondences must be indices or index pairs")
    if len(idx1) < ell:
        raise AlignmentError(f"need at least ell={ell} correspondences, got {len(idx1)}")
    for model, name in ((phi, "phi"), (psi, "psi")):
        if not _embedding_means_ok(model):
            warnings.warn(f"{name} embedding columns are far from mean-zero; check the fit")
    omap = align_mod.kabsch_align(phi.embedding[idx1], psi.embedding[idx2])

    provenance = _provenance_hash(net1, taps1, net2, taps2, ell, len(idx1))
    return NetworkTransform(
        phi=phi,
        psi=psi,
        omap=omap,
        taps1=taps1,
        taps2=taps2,
        provenance=provenance,
        interpolation=interpolation,
    )


def _provenance_hash(net1, taps1, net2, taps2, ell, n_corr):
    h = hashlib.sha256()
    for net in (net1, net2):
        h.update(repr(net.spec.layer_widths).encode())
        for w in net.weights:
            h.update(np.ascontiguousarray(w).tobytes())
    h.update(repr(taps1.neuron_ids).encode())
    h.update(repr(taps2.neuron_ids).encode())
    h.update(f"ell={ell},corr={n_corr}".encode())
    return h.hexdigest()


def _linear1d_inverse(model, values):
    """Univariate linear interpolation of reference points over a 1-D embedding."""
    order = np.argsort(model.embedding[:, 0], kind="stable")
    xp = model.embedding[order, 0]
    refs = model.reference_points[order]
    values = np.asarray(values, dtype=np.float64).ravel()
    cols = [np.interp(values, xp, refs[:, j]) for j in range(refs.shape[1])]
    return np.column_stack(cols)


def apply_transform(transform, y1):
    """Tap activations of network 1 -> predicted tap activations of network 2."""
    y1 = np.asarray(y1, dtype=np.float64)
    single = y1.ndim == 1
    z = dmap.embed(transform.phi, y1)
    w = transform.omap.apply(z)
    if transform.interpolation == "linear1d":
        out = _linear1d_inverse(transform.psi, w)
        out = out[0] if single else out
    else:
        out = dmap.inverse_embed(transform.psi, w)
    return out


def invert_transform(transform, y2):
    """Tap activations of network 2 -> tap activations of network 1."""
    y2 = np.asarray(y2, dtype=np.float64)
    single = y2.ndim == 1
    z = dmap.embed(transform.psi, y2)
    w = transform.omap.apply_inverse(z)
    if transform.interpolation == "linear1d":
        out = _linear1d_inverse(transform.phi, w)
        out = out[0] if single else out
    else:
        out = dmap.inverse_embed(transform.phi, w)
    return out


@dataclass(frozen=True)
class FoldReport:
    """Invertibility diagnostic of scalar observables along a 1-D sweep."""

    probe_points: np.ndarray
    injectivity_flags: np.ndarray
    first_failure: float = None
    monotonicity_pairs_violated: int = 0
    violation_inputs: tuple = ()

    @property
    def fold_detected(self):
        return self.monotonicity_pairs_violated > 0


def detect_fold(g1, g2, inputs=None, rel_tol=1e-3, jump_ratio=3.0):
    """Check whether g2 is an invertible function of g1 along a sorted sweep.

    Flags slope-sign changes of the discrete graph (g1, g2) and vertical
    segments (g1 nearly constant while g2 moves). Increments smaller than
    rel_tol times each observable's range are treated as zero; a vertical
    additionally requires the g2 increment to exceed jump_ratio times the
    g1 increment, which keeps threshold-straddling noise from registering.
    """
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    if g1.size != g2.size:
        raise ShapeError("observable sweeps must have equal length")
    if g1.size < 3:
        raise InsufficientProbeError("need at least 3 probe points")
    if inputs is None:
        inputs = np.arange(g1.size, dtype=np.float64)
    else:
        inputs = np.asarray(inputs, dtype=np.float64).ravel()
        if inputs.size != g1.size:
            raise ShapeError("inputs must match the observables in length")
        if np.any(np.diff(inputs) < 0):
            raise ShapeError("sweep inputs must be sorted ascending")

    tol1 = rel_tol * max(np.ptp(g1), 1e-300)
    tol2 = rel_tol * max(np.ptp(g2), 1e-300)
    d1 = np.diff(g1)
    d2 = np.diff(g2)
    flags = np.ones(g1.size, dtype=bool)
    violations = []

    # vertical segments: g1 stalls while g2 moves
    vertical = (np.abs(d1) <= tol1) & (np.abs(d2) > tol2) & (np.abs(d2) > jump_ratio * np.abs(d1))
    for i in np.flatnonzero(vertical):
        violations.append(float(inputs[i]))
        flags[i] = flags[i + 1] = False

    # slope sign changes between consecutive resolvable segments
    valid = (np.abs(d1) > tol1) & (np.abs(d2) > tol2)
    valid_idx = np.flatnonzero(valid)
    signs = np.sign(d2[valid_idx] / d1[valid_idx])
    for a, b in zip(range(len(valid_idx) - 1), range(1, len(valid_idx))):
        if signs[a] != signs[b]:
            junction = valid_idx[b]
            violations.append(float(inputs[junction]))
            flags[junction] = False
            flags[junction + 1] = False

    violations.sort()
    return FoldReport(
        probe_points=inputs,
        injectivity_flags=flags,
        first_failure=violations[0] if violations else None,
        monotonicity_pairs_violated=len(violations),
        violation_inputs=tuple(violations),
    )


def save_transform(directory, transform):
    """Bundle: phi/, psi/ model dirs, orthogonal_map.json, taps.json, manifest."""
    os.makedirs(directory, exist_ok=True)
    dmap.save_model(os.path.join(directory, "phi"), transform.phi)
    dmap.save_model(os.path.join(directory, "psi"), transform.psi)
    align_mod.save_orthogonal_map(os.path.join(directory, "orthogonal_map.json"), transform.omap)
    write_json(
        os.path.join(directory, "taps.json"),
        {
            "taps1": [list(t) for t in transform.taps1.neuron_ids],
            "taps2": [list(t) for t in transform.taps2.neuron_ids],
        },
    )
    write_json(
        os.path.join(directory, "manifest.json"),
        {
            "format": "dmapalign.transform",
            "version": 1,
            "ell": int(transform.ell),
            "provenance": transform.provenance,
            "interpolation": transform.interpolation,
        },
    )


def load_transform(directory):
    manifest = read_json(os.path.join(directory, "manifest.json"))
    taps_doc = read_json(os.path.join(directory, "taps.json"))
    return NetworkTransform(
        phi=dmap.load_model(os.path.join(directory, "phi")),
        psi=dmap.load_model(os.path.join(directory, "psi")),
        omap=align_mod.load_orthogonal_map(os.path.join(directory, "orthogonal_map.json")),
        taps1=nn.TapSelection(tuple(tuple(t) for t in taps_doc["taps1"])),
        taps2=nn.TapSelection(tuple(tuple(t) for t in taps_doc["taps2"])),
        provenance=manifest.get("provenance", ""),
        interpolation=manifest.get("interpolation", "nearest"),
    )
