"""Command line entry point: ``overlap-gae {train,eval,sweep,perturb,validate,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .experiment import run_experiment
from .graph import (
    DatasetError,
    load_dataset,
    planted_partition,
    read_cover,
    validate_graph,
    write_dataset,
    write_features,
    SingularThresholdError,
    zeta_threshold,
)
from .metrics import ONMI_VARIANTS, onmi, overlapping_f1
from .noise import perturb_attributes


def _floats(text: str) -> list[float]:
    """Comma-separated numbers; values above 1 are read as percentages."""
    vals = [float(t) for t in text.split(",") if t.strip()]
    return [v / 100.0 if v > 1.0 else v for v in vals]


def _add_dataset_args(p: argparse.ArgumentParser, cover_required: bool = False) -> None:
    p.add_argument("--edges", help="edge list file")
    p.add_argument("--features", help="feature file (.csv dense, otherwise sparse coordinates)")
    p.add_argument("--cover", required=cover_required, help="ground-truth cover file")
    p.add_argument("--feature-format", choices=["auto", "dense", "sparse"], default=None)
    p.add_argument("--normalize-features", action="store_true", default=None, help="L2-normalise feature rows")


def _add_run_args(p: argparse.ArgumentParser) -> None:
    _add_dataset_args(p)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="base seed; run r uses seed + r")
    p.add_argument("--jobs", type=int, help="grid points evaluated in parallel")
    p.add_argument("--label-rate", type=_floats, help="comma-separated label rates, e.g. 0.02,0.1 or 2,10")
    p.add_argument("--p-mis", type=_floats, help="comma-separated attribute-swap rates")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--onmi-variant", choices=ONMI_VARIANTS)
    p.add_argument("--modularity-form", choices=["H", "Z", "membership", "embedding"])
    p.add_argument("--zeta", type=float, help="override the density-derived threshold")
    p.add_argument("--epochs", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--heads", type=int)
    p.add_argument("--noise-mode", choices=["swap", "shuffle"])


def _overrides(args) -> dict:
    keys = {
        "edges": "edges", "features": "features", "cover": "cover", "feature_format": "feature_format",
        "normalize_features": "normalize_features", "seed": "seed", "jobs": "jobs",
        "label_rate": "label_rates", "p_mis": "p_mis", "out_dir": "out_dir", "onmi_variant": "onmi_variant",
        "modularity_form": "modularity_form", "zeta": "zeta", "epochs": "epochs", "runs": "runs",
        "lr": "lr", "alpha": "alpha", "beta": "beta", "heads": "heads", "noise_mode": "noise_mode",
    }
    return {dest: getattr(args, attr) for attr, dest in keys.items() if getattr(args, attr, None) is not None}


def _experiment_config(args) -> cfgmod.ExperimentConfig:
    over = _overrides(args)
    if args.config:
        return cfgmod.parse_config(args.config, over)
    return cfgmod.from_mapping(over, "<command line>")


def cmd_sweep(args) -> int:
    config = _experiment_config(args)
    config.check(need_paths=True)
    out = run_experiment(config)
    print((out / "results.csv").read_text(encoding="utf-8"), end="")
    return 0


def cmd_train(args) -> int:
    config = _experiment_config(args)
    config = replace(config, label_rates=config.label_rates[:1], p_mis=config.p_mis[:1]).check(need_paths=True)
    out = run_experiment(config)
    print((out / "results.csv").read_text(encoding="utf-8"), end="")
    return 0


def _cover_universe(paths):
    ids = set()
    for p in paths:
        for line in Path(p).read_text(encoding="utf-8").splitlines():
            s = line.strip()
            if s and not s.startswith("#"):
                ids.update(int(t) for t in s.split())
    return np.array(sorted(ids), dtype=np.int64)


def cmd_eval(args) -> int:
    if args.num_nodes is not None:
        pred = read_cover(args.pred, num_nodes=args.num_nodes)
        truth = read_cover(args.truth, num_nodes=args.num_nodes)
    else:
        ids = _cover_universe([args.pred, args.truth])
        pred = read_cover(args.pred, node_ids=ids)
        truth = read_cover(args.truth, node_ids=ids)
    print(f"onmi {onmi(pred, truth, args.onmi_variant):.4f}")
    print(f"f1 {overlapping_f1(pred, truth):.4f}")
    return 0


def cmd_perturb(args) -> int:
    g = load_dataset(args.edges, args.features, args.cover, args.feature_format, bool(args.normalize_features))
    X = perturb_attributes(g.features, args.p_mis, args.seed, args.noise_mode)
    write_features(X, args.output, g.node_ids, args.output_format)
    print(f"wrote {X.shape[0]}x{X.shape[1]} features to {args.output}")
    return 0


def cmd_validate(args) -> int:
    try:
        g = load_dataset(args.edges, args.features, args.cover, args.feature_format, bool(args.normalize_features))
    except DatasetError as exc:
        print(f"invalid: {exc}")
        return 1
    problems = validate_graph(g)
    info = {
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "features": g.num_features,
        "communities": g.ground_truth.k if g.ground_truth is not None else None,
        "isolated_nodes": int(np.count_nonzero(g.degrees == 0)),
    }
    try:
        info["zeta"] = round(zeta_threshold(g), 6)
    except SingularThresholdError as exc:
        info["zeta"] = f"undefined ({exc})"
    print(json.dumps(info, indent=2))
    for p in problems:
        print(f"violation: {p}")
    return 1 if problems else 0


def cmd_synth(args) -> int:
    g = planted_partition(args.block_size, args.blocks, args.p_in, args.p_out, args.features_per_block, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(g, out / "edges.txt", out / "features.csv", out / "cover.txt")
    print(f"wrote planted graph N={g.num_nodes} M={g.num_edges} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="overlap-gae", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on one (label rate, noise) setting and evaluate")
    _add_run_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid over label rates x attribute-noise rates")
    _add_run_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="compare two cover files")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--num-nodes", type=int, help="node universe size when ids are 0..N-1")
    p.add_argument("--onmi-variant", choices=ONMI_VARIANTS, default="max")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb", help="write attribute-swapped features")
    _add_dataset_args(p)
    p.add_argument("--p-mis", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-mode", choices=["swap", "shuffle"], default="swap")
    p.add_argument("--output", required=True)
    p.add_argument("--output-format", choices=["dense", "sparse"], default=None)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("validate", help="load a dataset and report invariant violations")
    _add_dataset_args(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="write a planted-partition dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--block-size", type=int, default=20)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--p-in", type=float, default=0.5)
    p.add_argument("--p-out", type=float, default=0.02)
    p.add_argument("--features-per-block", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    for attr in ("edges", "features"):
        if hasattr(args, attr) and args.command in ("perturb", "validate") and getattr(args, attr) is None:
            parser.error(f"--{attr} is required for {args.command}")
    try:
        return args.func(args)
    except (cfgmod.ConfigError, DatasetError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
