"""Command-line front end.

Subcommands: run (scenario reproduction), fit-dmap (fit a diffusion map from
CSV data), align (orthogonal map between two fitted models), transform
(apply a saved transform bundle), inspect (pretty-print artifact manifests).

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
DMAPALIGN_OUT_ROOT sets the default output root when --out is omitted.
"""

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import align as align_mod
from . import dmap, experiments, mahalanobis, sampling, transform
from .errors import ConfigError, DmapAlignError
from .io import read_json, read_matrix_csv, write_matrix_csv


def _out_root():
    return os.environ.get("DMAPALIGN_OUT_ROOT", ".")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dmapalign",
        description="Transformations between neural-network activation spaces",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment scenario")
    p_run.add_argument("--config", help="JSON config file")
    p_run.add_argument("--scenario", choices=experiments.SCENARIOS)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field (JSON-parsed value)",
    )

    p_fit = sub.add_parser("fit-dmap", help="fit a diffusion map from CSV data")
    p_fit.add_argument("--points", required=True, help="points CSV (n rows, m columns)")
    group = p_fit.add_mutually_exclusive_group(required=True)
    group.add_argument("--clouds-dir", help="neighborhood directory (see docs)")
    group.add_argument(
        "--covariances", help="CSV with one flattened m*m covariance per row"
    )
    p_fit.add_argument("--ell", type=int, required=True, help="embedding dimensions")
    p_fit.add_argument("--k", type=int, default=10, help="bandwidth neighbor index")
    p_fit.add_argument("--epsilon", type=float, help="bandwidth override")
    p_fit.add_argument("--max-rank", type=int, help="covariance rank truncation")
    p_fit.add_argument("--no-harmonic-removal", action="store_true")
    p_fit.add_argument("--out", help="model output directory")

    p_align = sub.add_parser("align", help="orthogonal map between two fitted models")
    p_align.add_argument("--model1", required=True)
    p_align.add_argument("--model2", required=True)
    p_align.add_argument(
        "--correspondences",
        help="CSV of matched reference indices (one or two columns); default: first max(ell, 10)",
    )
    p_align.add_argument("--out", help="output JSON path")

    p_tr = sub.add_parser("transform", help="apply a saved transform bundle")
    p_tr.add_argument("--bundle", required=True, help="transform bundle directory")
    p_tr.add_argument("--input", required=True, help="CSV of tap-activation rows")
    p_tr.add_argument("--out", help="output CSV path")
    p_tr.add_argument("--inverse", action="store_true", help="map network 2 -> network 1")

    p_ins = sub.add_parser("inspect", help="pretty-print an artifact manifest")
    p_ins.add_argument("path")
    return parser


def _cmd_run(args):
    doc = {}
    if args.config:
        try:
            doc = read_json(args.config)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read config {args.config}: {exc}", file=sys.stderr)
            return 2
    if args.scenario:
        doc["scenario"] = args.scenario
    if args.seed is not None:
        doc["seed"] = args.seed
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return 2
        key, _, raw = item.partition("=")
        try:
            doc[key] = json.loads(raw)
        except json.JSONDecodeError:
            doc[key] = raw
    if args.out:
        doc["out_dir"] = args.out
    try:
        cfg = experiments.config_from_dict(doc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.out_dir is None:
        out = os.path.join(_out_root(), f"{cfg.scenario}_seed{cfg.seed}")
        cfg = experiments.ExperimentConfig(**{**asdict(cfg), "out_dir": out})
    report = experiments.run_scenario(cfg)
    print(f"scenario {report.scenario} finished; report at {report.out_dir}/report.json")
    if args.verbose:
        print(json.dumps(experiments._json_ready(report.metrics), indent=2, sort_keys=True))
    return 0


def _cmd_fit_dmap(args):
    points, _ = read_matrix_csv(args.points)
    n = points.shape[0]
    if args.clouds_dir:
        nbhds = sampling.load_neighborhoods(args.clouds_dir)
        if nbhds.n != n:
            raise DmapAlignError(
                f"points ({n}) and clouds ({nbhds.n}) disagree on the point count"
            )
        estimates = mahalanobis.covariances_from_neighborhoods(nbhds, max_rank=args.max_rank)
    else:
        covs, _ = read_matrix_csv(args.covariances)
        if covs.shape[0] != n:
            raise DmapAlignError(
                f"points ({n}) and covariances ({covs.shape[0]}) disagree on the point count"
            )
        m = points.shape[1]
        if covs.shape[1] != m * m:
            raise DmapAlignError(
                f"covariance rows must have m*m={m * m} entries, got {covs.shape[1]}"
            )
        estimates = [
            mahalanobis.estimate_from_covariance(covs[i].reshape(m, m), max_rank=args.max_rank)
            for i in range(n)
        ]
    model = dmap.fit(
        (points, estimates),
        args.ell,
        k=args.k,
        epsilon=args.epsilon,
        harmonic_removal=not args.no_harmonic_removal,
        max_rank=args.max_rank,
    )
    out = args.out or os.path.join(_out_root(), "dmap_model")
    dmap.save_model(out, model)
    print(f"epsilon: {model.epsilon:.17g}")
    print("eigenvalues:", " ".join("%.17g" % v for v in model.eigenvalues))
    print(f"kept eigenvector indices: {list(model.kept_indices)}")
    print(f"model written to {out}")
    return 0


def _cmd_align(args):
    model1 = dmap.load_model(args.model1)
    model2 = dmap.load_model(args.model2)
    if model1.ell != model2.ell:
        raise DmapAlignError(
            f"embedding dimensions differ: {model1.ell} vs {model2.ell}"
        )
    ell = model1.ell
    if args.correspondences:
        corr, _ = read_matrix_csv(args.correspondences)
        corr = corr.astype(int)
        idx1 = corr[:, 0]
        idx2 = corr[:, 1] if corr.shape[1] > 1 else corr[:, 0]
    else:
        p = min(max(ell, 10), model1.n, model2.n)
        idx1 = idx2 = np.arange(p)
    if len(idx1) < ell:
        raise DmapAlignError(
            f"need at least ell={ell} correspondences, got {len(idx1)}"
        )
    omap = align_mod.kabsch_align(model1.embedding[idx1], model2.embedding[idx2])
    out = args.out or os.path.join(_out_root(), "orthogonal_map.json")
    align_mod.save_orthogonal_map(out, omap)
    print(f"residual: {omap.residual:.17g} over {omap.correspondences_used} correspondences")
    print(f"orthogonal map written to {out}")
    return 0


def _cmd_transform(args):
    bundle = transform.load_transform(args.bundle)
    data, _ = read_matrix_csv(args.input)
    if args.inverse:
        result = transform.invert_transform(bundle, data)
    else:
        result = transform.apply_transform(bundle, data)
    out = args.out or os.path.join(_out_root(), "transformed.csv")
    write_matrix_csv(out, np.atleast_2d(result))
    print(f"{len(np.atleast_2d(result))} rows written to {out}")
    return 0


def _cmd_inspect(args):
    path = args.path
    if os.path.isdir(path):
        for name in ("manifest.json", "report.json"):
            candidate = os.path.join(path, name)
            if os.path.exists(candidate):
                print(json.dumps(read_json(candidate), indent=2, sort_keys=True))
                return 0
        raise DmapAlignError(f"no manifest.json or report.json in {path}")
    doc = read_json(path)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "fit-dmap": _cmd_fit_dmap,
    "align": _cmd_align,
    "transform": _cmd_transform,
    "inspect": _cmd_inspect,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DmapAlignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
