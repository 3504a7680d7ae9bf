"""End-to-end protocol: repeated stratified splits, CV, training, reports.

Every (affordance, split) task is independent and seeded from
``derive_seed(master_seed, affordance, split_index)``; results are gathered in
a dict keyed by task and written in sorted task order, so output files do not
depend on scheduling.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (DEFAULT_KEPT_THRESHOLD, associate, fit_gaussian,
                       format_association, group_summary, magnitude_profile,
                       profile_from_normalized)
from .classifier import (config_grid, cross_validate, cross_validate_baseline,
                         evaluate, fit_baseline)
from .data import (Dataset, apply_standardization, load_dataset,
                   load_cloud_map, read_groups, split, standardize,
                   write_groups)
from .optimizer import NumericalError, TrainConfig, load_model, save_model, train
from .projection import colorize, export_cloud, point_importance

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["affordance", "method", "split_seed", "f1", "accuracy",
               "tp", "fp", "tn", "fn", "kept_fraction"]
METHODS = ("lmca-r", "knn")


class TaskError(RuntimeError):
    """An error raised inside one (affordance, split) task."""

    def __init__(self, affordance, split_index, cause):
        self.affordance = affordance
        self.split_index = split_index
        self.cause = cause
        super().__init__(f"[{affordance} / split {split_index}] "
                         f"{type(cause).__name__}: {cause}")


@dataclass
class ExperimentConfig:
    features: str = ""
    labels: str = ""
    groups: str = ""
    affordances: list = field(default_factory=list)  # empty = all
    n_splits: int = 25
    split_ratio: float = 0.7
    cv_folds: int = 5
    c_grid: list = field(default_factory=lambda: [0.1, 0.5, 1.0, 5.0, 10.0])
    lambda_grid: list = field(default_factory=lambda: [0.0, 0.01, 0.1, 1.0, 10.0])
    pca_grid: list = field(default_factory=list)  # empty = 0..min(D, 20)
    k: int = 3
    d: int = 3
    max_epochs: int = 1000
    init_step: float = 1e-3
    tol: float = 1e-5
    norm_eps: float = 1e-8
    lambda_units: str = "pull_mass"
    kept_threshold: float = DEFAULT_KEPT_THRESHOLD
    master_seed: int = 0
    out_dir: str = "results"
    n_jobs: int = 1
    global_standardize: bool = False
    baseline: bool = True

    def __post_init__(self):
        problems = []
        if self.n_splits < 1:
            problems.append("n_splits must be >= 1")
        if not self.c_grid or not self.lambda_grid:
            problems.append("c_grid and lambda_grid must be non-empty")
        if not 0 < self.split_ratio < 1:
            problems.append("split_ratio must be in (0, 1)")
        if self.cv_folds < 2:
            problems.append("cv_folds must be >= 2")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def from_file(cls, path, **overrides) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(k=self.k, d=self.d, max_epochs=self.max_epochs,
                           init_step=self.init_step, tol=self.tol,
                           norm_eps=self.norm_eps, lambda_units=self.lambda_units,
                           seed=self.master_seed)

    def grid(self) -> list[TrainConfig]:
        return config_grid(self.train_config(), self.c_grid, self.lambda_grid)

    def pca_dims(self, n_dims) -> list[int]:
        return [int(p) for p in self.pca_grid] or list(range(0, min(n_dims, 20) + 1))


def derive_seed(master_seed, affordance, split_index, purpose="split") -> int:
    digest = hashlib.sha256(f"{master_seed}|{affordance}|{split_index}|{purpose}".encode())
    return int.from_bytes(digest.digest()[:8], "big") >> 1


def safe_name(name) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "affordance"


def _fmt(x) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ tasks

def run_task(cfg, dataset, affordance, split_index):
    """One split of one affordance: returns (rows, trained model)."""
    split_seed = derive_seed(cfg.master_seed, affordance, split_index)
    cv_seed = derive_seed(cfg.master_seed, affordance, split_index, "cv")
    a = dataset.affordance_index(affordance)

    train_raw, test_raw = split(dataset, a, cfg.split_ratio, split_seed)
    if dataset.standardized:
        train_std, test_std, params = train_raw, test_raw, None
    else:
        train_std, params = standardize(train_raw)
        test_std = apply_standardization(test_raw, params)
    y_test = test_std.labels[:, a]

    best = cross_validate(train_raw, a, cfg.grid(), cfg.cv_folds, cv_seed)
    model = train(train_std, a, best, params)
    model.meta.update({"method": "lmca-r", "split_index": split_index,
                       "split_seed": split_seed,
                       "train_ids": list(train_std.instance_ids)})
    rows = [("lmca-r", evaluate(model, test_std.features, y_test,
                                threshold=cfg.kept_threshold))]
    if cfg.baseline:
        pca_dim = cross_validate_baseline(train_raw, a, cfg.pca_dims(dataset.n_dims),
                                          cfg.cv_folds, cv_seed)
        base = fit_baseline(train_std, a, pca_dim, k=cfg.k, standardization=params)
        rows.append(("knn", evaluate(base, test_std.features, y_test, kept=1.0)))
    out = []
    for method, rep in rows:
        out.append({"affordance": affordance, "method": method,
                    "split_seed": split_seed, "f1": rep.f1,
                    "accuracy": rep.accuracy, "tp": rep.tp, "fp": rep.fp,
                    "tn": rep.tn, "fn": rep.fn,
                    "kept_fraction": rep.kept_fraction})
    return out, model


def _run_task_guarded(args):
    cfg, dataset, affordance, split_index = args
    try:
        return (affordance, split_index), run_task(cfg, dataset, affordance, split_index)
    except Exception as exc:  # attribute to the task, re-raised by the caller
        return (affordance, split_index), TaskError(affordance, split_index, exc)


def run_experiment(cfg, dataset=None):
    """Run every (affordance, split) task and write the report files.

    Returns the per-run rows in output order.
    """
    if dataset is None:
        dataset = load_dataset(cfg.features, cfg.labels, cfg.groups)
    if cfg.global_standardize and not dataset.standardized:
        dataset, _ = standardize(dataset)
    names = list(cfg.affordances) or list(dataset.affordance_names)
    for name in names:
        dataset.affordance_index(name)

    tasks = [(cfg, dataset, name, s) for name in names for s in range(cfg.n_splits)]
    if cfg.n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = dict(pool.map(_run_task_guarded, tasks))
    else:
        results = dict(map(_run_task_guarded, tasks))

    failures = [r for r in results.values() if isinstance(r, TaskError)]
    if failures:
        for f in failures:
            logger.error("%s", f)
        raise failures[0]

    out = Path(cfg.out_dir)
    models_dir = out / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out / "profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["affordance", "split_index", *dataset.feature_names])
        for name in names:
            for s in range(cfg.n_splits):
                task_rows, model = results[(name, s)]
                rows.extend(task_rows)
                save_model(model, models_dir / f"{safe_name(name)}__split{s:03d}.json")
                prof = magnitude_profile(model.transform)
                w.writerow([name, s, *map(_fmt, prof.normalized)])
    write_groups(dataset.groups, models_dir / "groups.json")
    write_runs(rows, out / "runs.csv")
    agg = aggregate(rows)
    write_aggregate(agg, out / "aggregate.csv")
    (out / "aggregate.txt").write_text(format_aggregate(agg))
    meta = {"created": time.strftime("%Y-%m-%dT%H:%M:%S"), "version": __version__,
            "config": dataclasses.asdict(cfg),
            "std_convention": "population (divide by N)",
            "standardization": "global" if cfg.global_standardize else "per-split (fit on train)",
            "baseline": "standardize, then optional PCA, then kNN",
            "lambda_units": cfg.lambda_units}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return rows


def write_runs(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_COLUMNS)
        for r in rows:
            w.writerow([r["affordance"], r["method"], r["split_seed"],
                        _fmt(r["f1"]), _fmt(r["accuracy"]), r["tp"], r["fp"],
                        r["tn"], r["fn"], _fmt(r["kept_fraction"])])


def read_runs(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for key in ("f1", "accuracy", "kept_fraction"):
            r[key] = float(r[key])
        for key in ("split_seed", "tp", "fp", "tn", "fn"):
            r[key] = int(r[key])
    return rows


def aggregate(rows) -> list[dict]:
    """Mean F1 / accuracy / kept fraction per (affordance, method), in first-seen order."""
    groups = {}
    for r in rows:
        groups.setdefault((r["affordance"], r["method"]), []).append(r)
    out = []
    for (name, method), rs in groups.items():
        out.append({"affordance": name, "method": method, "n_runs": len(rs),
                    "mean_f1": float(np.mean([r["f1"] for r in rs])),
                    "mean_accuracy": float(np.mean([r["accuracy"] for r in rs])),
                    "mean_kept_fraction": float(np.mean([r["kept_fraction"] for r in rs]))})
    return out


def write_aggregate(agg, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["affordance", "method", "n_runs", "mean_f1", "mean_accuracy",
                    "mean_kept_fraction"])
        for r in agg:
            w.writerow([r["affordance"], r["method"], r["n_runs"], _fmt(r["mean_f1"]),
                        _fmt(r["mean_accuracy"]), _fmt(r["mean_kept_fraction"])])


def format_aggregate(agg) -> str:
    """Text table: one row per affordance, 'F1 (accuracy%) kept%' per method."""
    methods = [m for m in METHODS if any(r["method"] == m for r in agg)]
    by_key = {(r["affordance"], r["method"]): r for r in agg}
    names = list(dict.fromkeys(r["affordance"] for r in agg))

    def cell(r, method):
        s = f"{r['mean_f1']:.2f} ({100 * r['mean_accuracy']:.1f})"
        return s + f" {100 * r['mean_kept_fraction']:.0f}%" if method == "lmca-r" else s

    body = []
    for name in names:
        body.append([name] + [cell(by_key[(name, m)], m) if (name, m) in by_key else "-"
                              for m in methods])
    avg = ["Average"]
    for m in methods:
        rs = [r for r in agg if r["method"] == m]
        avg.append(cell({"mean_f1": np.mean([r["mean_f1"] for r in rs]),
                         "mean_accuracy": np.mean([r["mean_accuracy"] for r in rs]),
                         "mean_kept_fraction": np.mean([r["mean_kept_fraction"] for r in rs])}, m))
    header = ["Affordance"] + [m.upper() for m in methods]
    table = [header] + body + [avg]
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = ["  ".join(v.ljust(wd) for v, wd in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    lines.insert(len(lines) - 1, lines[1])
    return "\n".join(lines) + "\n"


# ------------------------------------------------------ model-dir analyses

def load_models(models_dir) -> dict:
    """Trained models in ``models_dir`` grouped by affordance, in split order."""
    by_aff = {}
    for path in sorted(Path(models_dir).glob("*.json")):
        if path.name == "groups.json":
            continue
        model = load_model(path)
        by_aff.setdefault(model.affordance, []).append(model)
    if not by_aff:
        raise FileNotFoundError(f"no model files in {models_dir}")
    return by_aff


def mean_profile(models):
    """Average of per-run normalized magnitude profiles."""
    profiles = [magnitude_profile(m.transform).normalized for m in models]
    return profile_from_normalized(np.mean(profiles, axis=0))


def feature_report(models_dir, out_dir, groups_path=None):
    """Per-affordance group masses and within-group KL vs uniform.

    Writes ``features.csv`` and one ``profile_<affordance>.csv`` per affordance
    (the barplot data). Returns {affordance: GroupSummary}.
    """
    models_dir = Path(models_dir)
    groups = read_groups(groups_path or models_dir / "groups.json")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = {}
    with open(out / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["affordance", "group", "mass", "kl_vs_uniform", "zero_mass", "n_runs"])
        for name, models in sorted(load_models(models_dir).items()):
            prof = mean_profile(models)
            summary = group_summary(prof, groups)
            summaries[name] = summary
            for g in summary.groups:
                w.writerow([name, g.name, _fmt(g.mass), _fmt(g.kl_vs_uniform),
                            int(g.zero_mass), len(models)])
            with open(out / f"profile_{safe_name(name)}.csv", "w", newline="") as ph:
                pw = csv.writer(ph, lineterminator="\n")
                pw.writerow(["dim", "group", "bin", "weight"])
                for g in groups:
                    for b in range(g.length):
                        pw.writerow([g.offset + b, g.name, b, _fmt(prof.normalized[g.offset + b])])
    return summaries


def association_report(models_dir, out_dir):
    """Fit a Gaussian per affordance over its runs and write the KL table."""
    gaussians = {}
    for name, models in load_models(models_dir).items():
        gaussians[name] = fit_gaussian([magnitude_profile(m.transform) for m in models])
    table = associate(gaussians)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "association_kl.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P \\ Q", *table.names])
        for name, row in zip(table.names, table.kl):
            w.writerow([name, *map(_fmt, row)])
    (out / "association.txt").write_text(format_association(table))
    return table


def project_clouds(profile, groups, cloud_paths, out_dir):
    """One colored PLY per point-cloud map; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in cloud_paths:
        cmap = load_cloud_map(path)
        imp = point_importance(profile, cmap, groups)
        target = out / f"{safe_name(cmap.instance_id)}.ply"
        export_cloud(cmap.points, colorize(imp), target)
        written.append(target)
    return written
