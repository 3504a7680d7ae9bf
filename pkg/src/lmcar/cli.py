"""Command-line entry point: ``lmcar {validate,run,features,associate,project,synth}``.

Exit codes: 0 success, 1 data error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

from .analysis import magnitude_profile
from .data import (DatasetError, SyntheticSpec, load_dataset, make_synthetic,
                   read_groups, save_dataset)
from .experiment import (ExperimentConfig, TaskError, association_report,
                         feature_report, load_models, mean_profile,
                         project_clouds, run_experiment)
from .optimizer import NumericalError, load_model

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("lmcar")


def _bool(text):
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(parser):
    """One flag per ExperimentConfig field, named after the field."""
    defaults = ExperimentConfig()
    for f in dataclasses.fields(ExperimentConfig):
        default = getattr(defaults, f.name)
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        kw = {"dest": f.name, "default": None, "help": f"(default: {default!r})"}
        if isinstance(default, bool):
            kw["type"] = _bool
        elif isinstance(default, list):
            kw["nargs"] = "*"
            kw["type"] = str if f.name == "affordances" else float
            if f.name == "pca_grid":
                kw["type"] = int
        else:
            kw["type"] = type(default)
        parser.add_argument(*flags, **kw)


def _experiment_config(args) -> ExperimentConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(ExperimentConfig)}
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_validate(args):
    try:
        ds = load_dataset(args.features, args.labels, args.groups)
    except DatasetError as exc:
        for p in exc.problems:
            print(f"error: {p}", file=sys.stderr)
        return EXIT_DATA
    print(f"ok: N={ds.n_instances} D={ds.n_dims} A={ds.n_affordances} "
          f"groups={len(ds.groups)}")
    for name, col in zip(ds.affordance_names, ds.labels.T):
        print(f"  {name}: {int(col.sum())} positive, {int(len(col) - col.sum())} negative")
    return EXIT_OK


def cmd_run(args):
    cfg = _experiment_config(args)
    rows = run_experiment(cfg)
    print((Path(cfg.out_dir) / "aggregate.txt").read_text(), end="")
    log.info("wrote %d result rows to %s", len(rows), cfg.out_dir)
    return EXIT_OK


def cmd_features(args):
    summaries = feature_report(args.models, args.out or args.models, args.groups)
    for name, summary in summaries.items():
        print(name)
        for g in summary.groups:
            flag = "  (zero mass)" if g.zero_mass else ""
            print(f"  {g.name:<20} mass {g.mass:.3f}  KL {g.kl_vs_uniform:.3f}{flag}")
    return EXIT_OK


def cmd_associate(args):
    out = args.out or args.models
    association_report(args.models, out)
    print((Path(out) / "association.txt").read_text(), end="")
    return EXIT_OK


def cmd_project(args):
    if args.model:
        profile = magnitude_profile(load_model(args.model).transform)
        default_groups = Path(args.model).parent / "groups.json"
    else:
        models = load_models(args.models)
        if args.affordance not in models:
            raise DatasetError(f"no models for affordance {args.affordance!r} in {args.models}")
        profile = mean_profile(models[args.affordance])
        default_groups = Path(args.models) / "groups.json"
    groups = read_groups(args.groups or default_groups)
    for path in project_clouds(profile, groups, args.clouds, args.out):
        print(path)
    return EXIT_OK


def cmd_synth(args):
    with open(args.spec) as fh:
        spec = SyntheticSpec.from_dict(json.load(fh))
    ds, informative = make_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out / "features.csv", out / "labels.csv", out / "groups.json")
    (out / "ground_truth.json").write_text(
        json.dumps({"informative_dims": informative, "spec": spec.to_dict()}, indent=2) + "\n")
    print(f"wrote synthetic dataset (N={ds.n_instances}, D={ds.n_dims}) to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lmcar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check dataset files against load-time invariants")
    p.add_argument("features")
    p.add_argument("labels")
    p.add_argument("groups")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="repeated splits + CV + training + reports")
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("features", help="group masses / KL-vs-uniform from saved models")
    p.add_argument("models", help="models directory written by 'run'")
    p.add_argument("--groups", help="group layout JSON (default: <models>/groups.json)")
    p.add_argument("--out", help="output directory (default: the models directory)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("associate", help="KL association table between affordances")
    p.add_argument("models")
    p.add_argument("--out")
    p.set_defaults(func=cmd_associate)

    p = sub.add_parser("project", help="color point clouds by feature importance")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="a single saved model JSON")
    src.add_argument("--models", help="models directory (mean profile over runs)")
    p.add_argument("--affordance", help="affordance to take from --models")
    p.add_argument("--groups")
    p.add_argument("--out", required=True)
    p.add_argument("clouds", nargs="+", help="point-cloud feature map JSON files")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("synth", help="write a synthetic dataset with known informative dims")
    p.add_argument("spec", help="SyntheticSpec JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "project" and args.models and not args.affordance:
        parser.error("--models requires --affordance")
    try:
        return args.func(args)
    except TaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(exc.cause, NumericalError) else EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
