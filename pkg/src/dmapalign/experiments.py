"""Seeded reproductions of the three computational experiments.

Scenarios:
  parabola_41         two nets on f(x) = -x^2 trained on the left half of
                      [-1, 1]; output-only map folds beyond the training
                      half, hidden-tap transform stays invertible.
  different_inputs_42 two nets on f(x) = -(x - 0.25)^2 - 1 with inputs
                      related by a closed-form nonlinear map; anisotropic
                      kernel embeddings agree up to sign, Euclidean control
                      does not.
  vectorfield_43      two nets approximating a planar limit-cycle field in
                      two coordinate systems; covariances from exact tap
                      Jacobians, embeddings agree up to a 2-D orthogonal map.

Every scenario is deterministic per seed; report.json and all CSVs are
byte-identical across reruns (wall-clock timings go to timings.json, which
is excluded from that guarantee).
"""

import math
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import align as align_mod
from . import dmap, mahalanobis, nn, sampling, transform
from .errors import ConfigError, DomainError
from .io import write_json, write_matrix_csv

# ---------------------------------------------------------------------------
# closed-form tasks


def task_parabola(x):
    """f(x) = -x^2."""
    x = np.asarray(x, dtype=np.float64)
    return -(x**2)


def task_shifted_parabola(x):
    """f(x) = -(x - 0.25)^2 - 1."""
    x = np.asarray(x, dtype=np.float64)
    return -((x - 0.25) ** 2) - 1.0


def map_S(x):
    """S(x) = 2 + 2x + sin(4 pi x) / (3 pi); strictly increasing."""
    x = np.asarray(x, dtype=np.float64)
    return 2.0 + 2.0 * x + np.sin(4.0 * math.pi * x) / (3.0 * math.pi)


def map_S_derivative(x):
    """S'(x) = 2 + (4/3) cos(4 pi x) >= 2/3 > 0."""
    x = np.asarray(x, dtype=np.float64)
    return 2.0 + (4.0 / 3.0) * np.cos(4.0 * math.pi * x)


def vectorfield_1(x1, x2):
    """Planar limit-cycle field: circular drift plus radial attraction."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    radial = 1.0 - x1**2 - x2**2
    return -x2 + x1 * radial, x1 + x2 * radial


_S43_DOMAIN = ((-1.5, 1.5), (-1.5, 1.5))


def s43_inverse(xhat, alpha=20.0, beta=10.0):
    """Closed-form inverse of the coordinate map s of the vector-field setup.

    With u = s1 - s2 = x1/alpha the inverse is x1 = alpha (s1 - s2),
    x2 = beta (s2 - x1^2/alpha^2). Points whose preimage leaves the declared
    square are rejected.
    """
    xh = np.asarray(xhat, dtype=np.float64)
    single = xh.ndim == 1
    xh = np.atleast_2d(xh)
    x1 = alpha * (xh[:, 0] - xh[:, 1])
    x2 = beta * (xh[:, 1] - x1**2 / alpha**2)
    out = np.column_stack([x1, x2])
    lo, hi = _S43_DOMAIN[0]
    if np.any(np.abs(out) > hi + 1e-9):
        bad = out[np.argmax(np.max(np.abs(out), axis=1))]
        raise DomainError(
            f"preimage {bad} lies outside the square {_S43_DOMAIN}; "
            "point is not in the image of s over that domain"
        )
    return out[0] if single else out


def vectorfield_2(xh1, xh2, alpha=20.0, beta=10.0):
    """Pushforward field: J_s at the preimage applied to vectorfield_1 there."""
    xh = np.column_stack(
        [np.atleast_1d(np.asarray(xh1, dtype=np.float64)), np.atleast_1d(np.asarray(xh2, dtype=np.float64))]
    )
    s_map = sampling.DiffeomorphismSpec("s_section43", alpha=alpha, beta=beta)
    x = s43_inverse(xh, alpha, beta)
    f1, f2 = vectorfield_1(x[:, 0], x[:, 1])
    field = np.column_stack([f1, f2])
    jac = s_map.jacobian(x)
    pushed = np.einsum("nij,nj->ni", jac, field)
    if np.isscalar(xh1) or np.asarray(xh1).ndim == 0:
        return pushed[0, 0], pushed[0, 1]
    return pushed[:, 0], pushed[:, 1]


# ---------------------------------------------------------------------------
# configuration

SCENARIOS = ("parabola_41", "different_inputs_42", "vectorfield_43")

_SCENARIO_DEFAULTS = {
    "parabola_41": dict(
        seed=8,  # default realization chosen to exhibit the extrapolation fold
        train_n=10240,
        val_n=512,
        arch1="1-1-1",
        arch2="1-8-8-8-1",
        n=512,
        q=1024,
        delta=0.05,
        ell=1,
        intrinsic_dim=1,
        epochs=4000,
        learning_rate=0.01,
        batch_size=1024,
        correspondences=10,
        reference_epsilon=(13.3, 55.4),
        max_rank=1,
        probe_n=513,
    ),
    "different_inputs_42": dict(
        train_n=900,
        val_n=100,
        arch1="1-3-1",
        arch2="1-3-1",
        n=990,
        q=11,
        delta=0.05,
        ell=1,
        intrinsic_dim=1,
        epochs=20000,
        learning_rate=0.01,
        batch_size=0,
        correspondences=10,
        reference_epsilon=(5.0, 5.0),
        max_rank=1,
        probe_n=401,
    ),
    "vectorfield_43": dict(
        train_n=3600,
        val_n=400,
        arch1="2-5-5-5-5-2",
        arch2="2-5-5-5-5-2",
        n=100000,  # full reference scale; ~10000 suits a single workstation
        q=None,  # covariances are analytic, no clouds
        delta=None,
        ell=2,
        intrinsic_dim=2,
        epochs=20000,
        learning_rate=0.01,
        batch_size=0,
        correspondences=20,
        reference_epsilon=(1.21e-3, 8.06e-4),
        max_rank=None,
        probe_n=0,
    ),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one scenario run; defaults mirror the reference setups."""

    scenario: str
    seed: int = 0
    out_dir: str = None
    n: int = 0
    q: int = None
    delta: float = None
    epsilon: float = None  # None: k-th-neighbor median rule per network
    ell: int = 1
    intrinsic_dim: int = 1
    arch1: str = ""
    arch2: str = ""
    train_n: int = 0
    val_n: int = 0
    epochs: int = 1000
    learning_rate: float = 0.01
    batch_size: int = 0
    optimizer: str = "adam"
    mse_target: float = 1e-3
    correspondences: int = 10
    probe_n: int = 513
    interior_margin: float = 0.15
    harmonic_removal: bool = True
    r_threshold: float = 0.5
    max_rank: int = None
    reference_epsilon: tuple = ()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}")
        if self.n < 1:
            raise ConfigError("n", "must be a positive integer")
        if self.q is not None and self.q < 2:
            raise ConfigError("q", "must be >= 2")
        if self.delta is not None and self.delta <= 0:
            raise ConfigError("delta", "must be positive")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ConfigError("epsilon", "must be positive")
        if self.ell < 1:
            raise ConfigError("ell", "must be >= 1")
        if self.train_n < 1:
            raise ConfigError("train_n", "must be a positive integer")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate", "must be positive")
        if self.correspondences < 1:
            raise ConfigError("correspondences", "must be >= 1")
        if self.mse_target <= 0:
            raise ConfigError("mse_target", "must be positive")


def default_config(scenario, **overrides):
    """Config with the reference defaults for a scenario, plus overrides."""
    if scenario not in SCENARIOS:
        raise ConfigError("scenario", f"unknown scenario {scenario!r}")
    base = dict(_SCENARIO_DEFAULTS[scenario])
    base["scenario"] = scenario
    fields = set(ExperimentConfig.__dataclass_fields__)
    for key in overrides:
        if key not in fields:
            raise ConfigError(key, "unknown field")
    base.update(overrides)
    return ExperimentConfig(**base)


def config_from_dict(doc):
    """Build a config from a parsed JSON document (CLI entry path)."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    if "scenario" not in doc:
        raise ConfigError("scenario", "missing required field")
    doc = dict(doc)
    scenario = doc.pop("scenario")
    return default_config(scenario, **doc)


def _derive_seeds(seed):
    root = np.random.default_rng(seed)
    names = (
        "train_data",
        "val_data",
        "net1_init",
        "net2_init",
        "net1_train",
        "net2_train",
        "dmap_points",
        "neighborhoods",
    )
    return {name: int(root.integers(2**63 - 1)) for name in names}


# ---------------------------------------------------------------------------
# shared helpers


def _train_network(arch, init_seed, train_seed, X, Y, cfg):
    net = nn.Mlp.initialize(nn.ArchitectureSpec.from_string(arch), init_seed)
    tcfg = nn.TrainingConfig(
        optimizer=cfg.optimizer,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=train_seed,
    )
    curve = []
    trained, train_mse = nn.train(net, (X, Y), tcfg, curve=curve)
    return trained, train_mse, curve


def _bbox_diameter(points):
    """Length of the bounding-box diagonal; the 'embedding diameter'."""
    pts = np.atleast_2d(points)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def _aligned_rmse(phi_emb, psi_emb, omap):
    aligned = phi_emb @ omap.matrix.T
    err = aligned - psi_emb
    rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    diameter = _bbox_diameter(psi_emb)
    return aligned, rmse, diameter


def _identity_estimates(n, m):
    eye = np.eye(m)
    est = mahalanobis.CovarianceEstimate(
        covariance=eye, pseudoinverse=eye.copy(), rank=m, source="empirical"
    )
    return [est] * n


class _Timer:
    def __init__(self):
        self.stages = {}

    def stage(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + time.perf_counter() - self.t0
                return False

        return _Ctx()


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class ScenarioReport:
    """Scalar metrics plus the artifact paths written for one run."""

    scenario: str
    metrics: dict
    out_dir: str = None
    artifacts: tuple = ()
    timings: dict = None
    transform: object = None  # the built NetworkTransform, when applicable


def _emit(out_dir, report_doc, csv_artifacts, timings):
    """Write report.json + CSVs (deterministic) and timings.json (not)."""
    if out_dir is None:
        return ()
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, (matrix, header) in csv_artifacts.items():
        path = os.path.join(out_dir, name)
        write_matrix_csv(path, matrix, header)
        paths.append(path)
    report_path = os.path.join(out_dir, "report.json")
    write_json(report_path, _json_ready(report_doc))
    paths.append(report_path)
    write_json(os.path.join(out_dir, "timings.json"), _json_ready(timings))
    return tuple(paths)


# ---------------------------------------------------------------------------
# scenarios


def run_scenario(cfg):
    """Train, build the transform, measure agreement, write artifacts."""
    if cfg.scenario == "parabola_41":
        return _run_parabola_41(cfg)
    if cfg.scenario == "different_inputs_42":
        return _run_different_inputs_42(cfg)
    return _run_vectorfield_43(cfg)


def _train_stage(cfg, seeds, make_data, timer):
    """Sample data, train both networks, collect MSE metrics and curves."""
    with timer.stage("training_data"):
        (x1, y1), (x2, y2), (vx1, vy1), (vx2, vy2) = make_data(seeds)
    with timer.stage("train_net1"):
        net1, mse1, curve1 = _train_network(
            cfg.arch1, seeds["net1_init"], seeds["net1_train"], x1, y1, cfg
        )
    with timer.stage("train_net2"):
        net2, mse2, curve2 = _train_network(
            cfg.arch2, seeds["net2_init"], seeds["net2_train"], x2, y2, cfg
        )
    val1 = nn.mse(net1, np.atleast_2d(vx1), np.atleast_2d(vy1))
    val2 = nn.mse(net2, np.atleast_2d(vx2), np.atleast_2d(vy2))
    training = {
        "net1": {
            "train_mse": mse1,
            "validation_mse": val1,
            "target_met": mse1 <= cfg.mse_target,
        },
        "net2": {
            "train_mse": mse2,
            "validation_mse": val2,
            "target_met": mse2 <= cfg.mse_target,
        },
        "mse_target": cfg.mse_target,
    }
    return net1, net2, training, curve1, curve2


def _run_parabola_41(cfg):
    timer = _Timer()
    seeds = _derive_seeds(cfg.seed)

    def make_data(seeds):
        train = sampling.sample_uniform((-1.0, 0.0), cfg.train_n, seeds["train_data"])
        val = sampling.sample_uniform((-1.0, 1.0), cfg.val_n, seeds["val_data"])
        xt, xv = train.points, val.points
        yt, yv = task_parabola(xt), task_parabola(xv)
        return (xt, yt), (xt, yt), (xv, yv), (xv, yv)

    net1, net2, training, curve1, curve2 = _train_stage(cfg, seeds, make_data, timer)

    # output-only pair: fold expected beyond the training half
    with timer.stage("fold_sweep"):
        xs = np.linspace(-1.0, 1.0, cfg.probe_n)
        out1 = nn.forward(net1, xs[:, None])[:, 0]
        out2 = nn.forward(net2, xs[:, None])[:, 0]
        fold = transform.detect_fold(out1, out2, xs)

    # hidden-tap transform over all of the input interval
    taps1 = nn.TapSelection.last_hidden(net1.spec)
    taps2 = nn.TapSelection.last_hidden(net2.spec)
    with timer.stage("neighborhoods"):
        base = sampling.sample_uniform((-1.0, 1.0), cfg.n, seeds["dmap_points"])
        nbhds = sampling.delta_ball_neighborhoods(base, cfg.delta, cfg.q, seeds["neighborhoods"])
    with timer.stage("build_transform"):
        net_t = transform.build_transform(
            net1,
            taps1,
            net2,
            taps2,
            nbhds,
            nbhds,
            cfg.ell,
            correspondences=np.arange(min(cfg.correspondences, cfg.n)),
            intrinsic_dim=cfg.intrinsic_dim,
            epsilon=cfg.epsilon,
            harmonic_removal=cfg.harmonic_removal,
            r_threshold=cfg.r_threshold,
            max_rank=cfg.max_rank,
        )

    with timer.stage("invertibility_sweep"):
        order = np.argsort(base.points[:, 0], kind="stable")
        sweep_x = base.points[order, 0]
        emb1 = net_t.phi.embedding[order, 0]
        emb2 = net_t.psi.embedding[order, 0]
        hidden_sweep = transform.detect_fold(emb1, emb2, sweep_x)

    aligned, rmse, diameter = _aligned_rmse(net_t.phi.embedding, net_t.psi.embedding, net_t.omap)

    taps2_actual = nn.forward_with_taps(net2, taps2, base.points)
    taps1_values = nn.forward_with_taps(net1, taps1, base.points)
    taps2_predicted = transform.apply_transform(net_t, taps1_values)

    metrics = {
        "training": training,
        "epsilon": {
            "net1": net_t.phi.epsilon,
            "net2": net_t.psi.epsilon,
            "reference": list(cfg.reference_epsilon),
        },
        "alignment": {
            "residual": net_t.omap.residual,
            "correspondences": net_t.omap.correspondences_used,
            "matrix": net_t.omap.matrix,
        },
        "embedding_agreement": {
            "aligned_rmse": rmse,
            "diameter": diameter,
            "normalized_rmse": rmse / diameter if diameter > 0 else float("inf"),
        },
        "fold_output_pair": {
            "violations": fold.monotonicity_pairs_violated,
            "violation_inputs": list(fold.violation_inputs),
            "first_failure": fold.first_failure,
            "outside_training_half": [v for v in fold.violation_inputs if v > 0.0],
        },
        "fold_hidden_taps": {
            "violations": hidden_sweep.monotonicity_pairs_violated,
            "violation_inputs": list(hidden_sweep.violation_inputs),
        },
        "transform_prediction_rmse": float(
            np.sqrt(np.mean(np.sum((taps2_predicted - taps2_actual) ** 2, axis=1)))
        ),
        "seeds": seeds,
        "config": _json_ready(asdict(cfg)),
    }
    csvs = {
        "fold_sweep.csv": (
            np.column_stack([xs, out1, out2]),
            ["x", "net1_output", "net2_output"],
        ),
        "embedding_net1.csv": (
            np.column_stack([base.points[:, 0], net_t.phi.embedding]),
            ["x"] + [f"phi_{i + 1}" for i in range(net_t.phi.ell)],
        ),
        "embedding_net2.csv": (
            np.column_stack([base.points[:, 0], net_t.psi.embedding]),
            ["x"] + [f"psi_{i + 1}" for i in range(net_t.psi.ell)],
        ),
        "embedding_net1_aligned.csv": (
            np.column_stack([base.points[:, 0], aligned]),
            ["x"] + [f"aligned_{i + 1}" for i in range(net_t.phi.ell)],
        ),
        "transform_sweep.csv": (
            np.column_stack([base.points[:, 0], taps1_values, taps2_actual, taps2_predicted]),
            ["x"]
            + [f"tap1_{i}" for i in range(taps1.ell)]
            + [f"tap2_actual_{i}" for i in range(taps2.ell)]
            + [f"tap2_pred_{i}" for i in range(taps2.ell)],
        ),
        "training_curve_net1.csv": (np.asarray(curve1)[:, None], ["mse"]),
        "training_curve_net2.csv": (np.asarray(curve2)[:, None], ["mse"]),
    }
    report_doc = {"scenario": cfg.scenario, **metrics}
    artifacts = _emit(cfg.out_dir, report_doc, csvs, timer.stages)
    return ScenarioReport(
        scenario=cfg.scenario,
        metrics=metrics,
        out_dir=cfg.out_dir,
        artifacts=artifacts,
        timings=timer.stages,
        transform=net_t,
    )


def _run_different_inputs_42(cfg):
    timer = _Timer()
    seeds = _derive_seeds(cfg.seed)
    s_map = sampling.DiffeomorphismSpec("s_section42")

    def make_data(seeds):
        train = sampling.sample_uniform((0.0, 1.0), cfg.train_n, seeds["train_data"])
        val = sampling.sample_uniform((0.0, 1.0), cfg.val_n, seeds["val_data"])
        x1t, x1v = train.points, val.points
        x2t, x2v = s_map.apply(x1t), s_map.apply(x1v)
        return (
            (x1t, task_shifted_parabola(x1t)),
            (x2t, task_shifted_parabola(x2t)),
            (x1v, task_shifted_parabola(x1v)),
            (x2v, task_shifted_parabola(x2v)),
        )

    net1, net2, training, curve1, curve2 = _train_stage(cfg, seeds, make_data, timer)

    taps1 = nn.TapSelection.last_hidden(net1.spec)
    taps2 = nn.TapSelection.last_hidden(net2.spec)
    with timer.stage("neighborhoods"):
        base = sampling.sample_uniform((0.0, 4.0), cfg.n, seeds["dmap_points"])
        nbhds1 = sampling.delta_ball_neighborhoods(base, cfg.delta, cfg.q, seeds["neighborhoods"])
        nbhds2 = sampling.pushforward_neighborhoods(nbhds1, s_map)

    corr = np.arange(min(cfg.correspondences, cfg.n))
    with timer.stage("build_transform"):
        net_t = transform.build_transform(
            net1,
            taps1,
            net2,
            taps2,
            nbhds1,
            nbhds2,
            cfg.ell,
            correspondences=corr,
            intrinsic_dim=cfg.intrinsic_dim,
            epsilon=cfg.epsilon,
            harmonic_removal=cfg.harmonic_removal,
            r_threshold=cfg.r_threshold,
            max_rank=cfg.max_rank,
        )
    aligned, rmse, diameter = _aligned_rmse(net_t.phi.embedding, net_t.psi.embedding, net_t.omap)
    norm_rmse = rmse / diameter if diameter > 0 else float("inf")

    # control: identical pipeline with identity covariances (Euclidean kernel)
    with timer.stage("euclidean_control"):
        tap_set1 = sampling.evaluate_neighborhoods(nbhds1, net1, taps1)
        tap_set2 = sampling.evaluate_neighborhoods(nbhds2, net2, taps2)
        pts1 = tap_set1.empirical_means()
        pts2 = tap_set2.empirical_means()
        phi_e = dmap.fit(
            (pts1, _identity_estimates(cfg.n, taps1.ell)),
            cfg.ell,
            harmonic_removal=cfg.harmonic_removal,
            r_threshold=cfg.r_threshold,
        )
        psi_e = dmap.fit(
            (pts2, _identity_estimates(cfg.n, taps2.ell)),
            cfg.ell,
            harmonic_removal=cfg.harmonic_removal,
            r_threshold=cfg.r_threshold,
        )
        omap_e = align_mod.kabsch_align(phi_e.embedding[corr], psi_e.embedding[corr])
        aligned_e, rmse_e, diameter_e = _aligned_rmse(phi_e.embedding, psi_e.embedding, omap_e)
        norm_rmse_e = rmse_e / diameter_e if diameter_e > 0 else float("inf")

    metrics = {
        "training": training,
        "epsilon": {
            "net1": net_t.phi.epsilon,
            "net2": net_t.psi.epsilon,
            "reference": list(cfg.reference_epsilon),
        },
        "alignment": {
            "residual": net_t.omap.residual,
            "correspondences": net_t.omap.correspondences_used,
            "matrix": net_t.omap.matrix,
        },
        "embedding_agreement": {
            "aligned_rmse": rmse,
            "diameter": diameter,
            "normalized_rmse": norm_rmse,
        },
        "euclidean_control": {
            "aligned_rmse": rmse_e,
            "diameter": diameter_e,
            "normalized_rmse": norm_rmse_e,
            "gap_factor": norm_rmse_e / norm_rmse if norm_rmse > 0 else float("inf"),
            "mahalanobis_beats_control_10x": norm_rmse < 0.1 * norm_rmse_e,
        },
        "notes": [
            "neighborhood size q defaults to the tabulated 11; the running text "
            "mentions 15-point neighborhoods",
        ],
        "seeds": seeds,
        "config": _json_ready(asdict(cfg)),
    }
    csvs = {
        "embedding_net1.csv": (
            np.column_stack([base.points[:, 0], net_t.phi.embedding]),
            ["x"] + [f"phi_{i + 1}" for i in range(net_t.phi.ell)],
        ),
        "embedding_net2.csv": (
            np.column_stack([base.points[:, 0], net_t.psi.embedding]),
            ["x"] + [f"psi_{i + 1}" for i in range(net_t.psi.ell)],
        ),
        "embedding_net1_aligned.csv": (
            np.column_stack([base.points[:, 0], aligned]),
            ["x"] + [f"aligned_{i + 1}" for i in range(net_t.phi.ell)],
        ),
        "embedding_euclidean_net1.csv": (
            np.column_stack([base.points[:, 0], phi_e.embedding]),
            ["x"] + [f"phi_{i + 1}" for i in range(phi_e.ell)],
        ),
        "embedding_euclidean_net2.csv": (
            np.column_stack([base.points[:, 0], psi_e.embedding]),
            ["x"] + [f"psi_{i + 1}" for i in range(psi_e.ell)],
        ),
        "embedding_euclidean_net1_aligned.csv": (
            np.column_stack([base.points[:, 0], aligned_e]),
            ["x"] + [f"aligned_{i + 1}" for i in range(phi_e.ell)],
        ),
        "training_curve_net1.csv": (np.asarray(curve1)[:, None], ["mse"]),
        "training_curve_net2.csv": (np.asarray(curve2)[:, None], ["mse"]),
    }
    report_doc = {"scenario": cfg.scenario, **metrics}
    artifacts = _emit(cfg.out_dir, report_doc, csvs, timer.stages)
    return ScenarioReport(
        scenario=cfg.scenario,
        metrics=metrics,
        out_dir=cfg.out_dir,
        artifacts=artifacts,
        timings=timer.stages,
        transform=net_t,
    )


def _run_vectorfield_43(cfg):
    timer = _Timer()
    seeds = _derive_seeds(cfg.seed)
    s_map = sampling.DiffeomorphismSpec("s_section43")
    square = _S43_DOMAIN

    def make_data(seeds):
        train = sampling.sample_uniform(square, cfg.train_n, seeds["train_data"])
        val = sampling.sample_uniform(square, cfg.val_n, seeds["val_data"])
        xt, xv = train.points, val.points

        def targets(x):
            f1, f2 = vectorfield_1(x[:, 0], x[:, 1])
            return np.column_stack([f1, f2])

        def pushed_targets(x):
            jac = s_map.jacobian(x)
            return np.einsum("nij,nj->ni", jac, targets(x))

        return (
            (xt, targets(xt)),
            (s_map.apply(xt), pushed_targets(xt)),
            (xv, targets(xv)),
            (s_map.apply(xv), pushed_targets(xv)),
        )

    net1, net2, training, curve1, curve2 = _train_stage(cfg, seeds, make_data, timer)

    taps1 = nn.TapSelection.last_hidden(net1.spec)
    taps2 = nn.TapSelection.last_hidden(net2.spec)
    with timer.stage("observations"):
        base = sampling.sample_uniform(square, cfg.n, seeds["dmap_points"])
        x = base.points
        xh = s_map.apply(x)
        y1 = nn.forward_with_taps(net1, taps1, x)
        y2 = nn.forward_with_taps(net2, taps2, xh)

    with timer.stage("jacobian_covariances"):
        jac1 = nn.jacobian_to_taps_batch(net1, taps1, x)
        # chain through s: both covariance surrogates are w.r.t. the shared
        # square coordinates, which is what makes the two metrics consistent
        jac2 = np.matmul(nn.jacobian_to_taps_batch(net2, taps2, xh), s_map.jacobian(x))
        est1 = [mahalanobis.analytic_covariance(jac1[i]) for i in range(cfg.n)]
        est2 = [mahalanobis.analytic_covariance(jac2[i]) for i in range(cfg.n)]
        ranks1 = np.array([e.rank for e in est1])
        ranks2 = np.array([e.rank for e in est2])

    with timer.stage("fit_embeddings"):
        phi = dmap.fit(
            (y1, est1),
            cfg.ell,
            epsilon=cfg.epsilon,
            harmonic_removal=cfg.harmonic_removal,
            r_threshold=cfg.r_threshold,
        )
        psi = dmap.fit(
            (y2, est2),
            cfg.ell,
            epsilon=cfg.epsilon,
            harmonic_removal=cfg.harmonic_removal,
            r_threshold=cfg.r_threshold,
        )

    with timer.stage("alignment"):
        corr = np.arange(min(cfg.correspondences, cfg.n))
        omap = align_mod.kabsch_align(phi.embedding[corr], psi.embedding[corr])
        aligned, rmse, diameter = _aligned_rmse(phi.embedding, psi.embedding, omap)
        displacement = np.linalg.norm(aligned - psi.embedding, axis=1)
        lo, hi = square[0]
        interior = np.all(
            (x >= lo + cfg.interior_margin) & (x <= hi - cfg.interior_margin), axis=1
        )
        median_interior = float(np.median(displacement[interior])) if interior.any() else float("nan")

    net_t = transform.NetworkTransform(
        phi=phi,
        psi=psi,
        omap=omap,
        taps1=taps1,
        taps2=taps2,
        provenance=transform._provenance_hash(net1, taps1, net2, taps2, cfg.ell, len(corr)),
    )

    metrics = {
        "training": training,
        "epsilon": {
            "net1": phi.epsilon,
            "net2": psi.epsilon,
            "reference": list(cfg.reference_epsilon),
        },
        "covariance_ranks": {
            "net1_min": int(ranks1.min()),
            "net1_max": int(ranks1.max()),
            "net2_min": int(ranks2.min()),
            "net2_max": int(ranks2.max()),
        },
        "alignment": {
            "residual": omap.residual,
            "correspondences": omap.correspondences_used,
            "matrix": omap.matrix,
        },
        "embedding_agreement": {
            "aligned_rmse": rmse,
            "diameter": diameter,
            "normalized_rmse": rmse / diameter if diameter > 0 else float("inf"),
            "median_interior_displacement": median_interior,
            "median_interior_normalized": median_interior / diameter
            if diameter > 0
            else float("inf"),
            "interior_points": int(interior.sum()),
        },
        "seeds": seeds,
        "config": _json_ready(asdict(cfg)),
    }
    csvs = {
        "embedding_net1.csv": (
            np.column_stack([x, phi.embedding]),
            ["x1", "x2"] + [f"phi_{i + 1}" for i in range(cfg.ell)],
        ),
        "embedding_net2.csv": (
            np.column_stack([x, psi.embedding]),
            ["x1", "x2"] + [f"psi_{i + 1}" for i in range(cfg.ell)],
        ),
        "embedding_net1_aligned.csv": (
            np.column_stack([x, aligned]),
            ["x1", "x2"] + [f"aligned_{i + 1}" for i in range(cfg.ell)],
        ),
        "training_curve_net1.csv": (np.asarray(curve1)[:, None], ["mse"]),
        "training_curve_net2.csv": (np.asarray(curve2)[:, None], ["mse"]),
    }
    report_doc = {"scenario": cfg.scenario, **metrics}
    artifacts = _emit(cfg.out_dir, report_doc, csvs, timer.stages)
    return ScenarioReport(
        scenario=cfg.scenario,
        metrics=metrics,
        out_dir=cfg.out_dir,
        artifacts=artifacts,
        timings=timer.stages,
        transform=net_t,
    )
