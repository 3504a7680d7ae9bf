"""Datasets of stacked feature vectors with binary affordance labels.

Covers loading/validation of the CSV + JSON on-disk format, population-std
standardization, stratified splitting, and synthetic data with known
informative dimensions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised when dataset files or values violate the load-time invariants.

    All detected problems are collected in ``problems`` so callers can report
    every one of them instead of only the first.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class FeatureGroupSpec:
    name: str
    offset: int
    length: int
    point_mapped: bool = False

    @property
    def stop(self) -> int:
        return self.offset + self.length

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.stop)

    def to_dict(self) -> dict:
        return {"name": self.name, "offset": self.offset,
                "length": self.length, "point_mapped": self.point_mapped}


def check_groups(groups, n_dims) -> list[str]:
    """Return a list of layout problems (empty when the groups tile [0, D))."""
    problems = []
    names = [g.name for g in groups]
    if len(set(names)) != len(names):
        problems.append(f"duplicate group names: {names}")
    pos = 0
    for g in groups:
        if g.length < 1:
            problems.append(f"group {g.name!r} has length {g.length} < 1")
        if g.offset > pos:
            problems.append(f"gap in group layout: dims [{pos}, {g.offset}) "
                            f"not covered before group {g.name!r}")
        elif g.offset < pos:
            problems.append(f"group {g.name!r} at offset {g.offset} overlaps "
                            f"the previous group (ends at {pos})")
        pos = max(pos, g.stop)
    if pos < n_dims:
        problems.append(f"groups cover only [0, {pos}) of D={n_dims}")
    elif pos > n_dims:
        problems.append(f"groups extend to {pos} beyond D={n_dims}")
    return problems


@dataclass(frozen=True)
class StandardizationParams:
    mean: np.ndarray
    std: np.ndarray
    convention: str = "population"

    def apply(self, features):
        return (np.asarray(features, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": [float(v).hex() for v in self.mean],
                "std": [float(v).hex() for v in self.std],
                "convention": self.convention}

    @classmethod
    def from_dict(cls, d) -> "StandardizationParams":
        return cls(mean=np.array([float.fromhex(v) for v in d["mean"]]),
                   std=np.array([float.fromhex(v) for v in d["std"]]),
                   convention=d.get("convention", "population"))


@dataclass(frozen=True, eq=False)
class Dataset:
    """N instances x D stacked features with an N x A binary label matrix."""

    features: np.ndarray
    labels: np.ndarray
    affordance_names: tuple
    groups: tuple
    instance_ids: tuple
    standardized: bool = False
    feature_names: tuple = field(default=())

    def __post_init__(self):
        problems = validate_arrays(self.features, self.labels,
                                   self.affordance_names, self.groups,
                                   self.instance_ids)
        if problems:
            raise DatasetError(problems)
        if not self.feature_names:
            object.__setattr__(self, "feature_names",
                               tuple(f"f{j}" for j in range(self.n_dims)))

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_dims(self) -> int:
        return self.features.shape[1]

    @property
    def n_affordances(self) -> int:
        return self.labels.shape[1]

    def affordance_index(self, affordance) -> int:
        if isinstance(affordance, str):
            try:
                return self.affordance_names.index(affordance)
            except ValueError:
                raise KeyError(f"unknown affordance {affordance!r}") from None
        if not 0 <= affordance < self.n_affordances:
            raise IndexError(f"affordance index {affordance} out of range")
        return int(affordance)

    def label_column(self, affordance) -> np.ndarray:
        return self.labels[:, self.affordance_index(affordance)]

    def subset(self, indices) -> "Dataset":
        """Rows ``indices`` as a new dataset.

        Label columns are not re-validated for degeneracy here: a split side
        may legitimately lack positives for affordances other than the one it
        was stratified on.
        """
        idx = np.asarray(indices, dtype=int)
        ds = object.__new__(Dataset)
        for name, value in (
                ("features", self.features[idx]),
                ("labels", self.labels[idx]),
                ("affordance_names", self.affordance_names),
                ("groups", self.groups),
                ("instance_ids", tuple(self.instance_ids[i] for i in idx)),
                ("standardized", self.standardized),
                ("feature_names", self.feature_names)):
            object.__setattr__(ds, name, value)
        return ds

    def with_features(self, features, standardized) -> "Dataset":
        ds = self.subset(np.arange(self.n_instances))
        object.__setattr__(ds, "features", np.asarray(features, dtype=float))
        object.__setattr__(ds, "standardized", standardized)
        return ds


def validate_arrays(features, labels, affordance_names, groups, instance_ids):
    problems = []
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.ndim != 2:
        return [f"features must be 2-D, got shape {features.shape}"]
    if labels.ndim != 2:
        return [f"labels must be 2-D, got shape {labels.shape}"]
    n, D = features.shape
    if labels.shape[0] != n:
        problems.append(f"row-count mismatch: features have {n} rows, "
                        f"labels have {labels.shape[0]} rows")
    if len(instance_ids) != n:
        problems.append(f"{len(instance_ids)} instance ids for {n} rows")
    if len(affordance_names) != labels.shape[1]:
        problems.append(f"{len(affordance_names)} affordance names for "
                        f"{labels.shape[1]} label columns")
    bad = np.argwhere(~np.isfinite(features))
    for r, c in bad[:10]:
        problems.append(f"non-finite feature at row {r}, column {c}")
    if len(bad) > 10:
        problems.append(f"... {len(bad) - 10} more non-finite entries")
    if not np.isin(labels, (0, 1)).all():
        problems.append("labels must be 0/1")
    else:
        for a in range(labels.shape[1]):
            col = labels[:, a]
            name = affordance_names[a] if a < len(affordance_names) else a
            if col.min() == col.max():
                problems.append(f"degenerate affordance column {name!r}: "
                                f"all entries are {int(col[0]) if len(col) else '-'}")
    problems.extend(check_groups(groups, D))
    return problems


# ---------------------------------------------------------------- file I/O

def _fmt(x) -> str:
    return repr(float(x))


def read_groups(path) -> list[FeatureGroupSpec]:
    with open(path) as fh:
        raw = json.load(fh)
    if isinstance(raw, dict):
        raw = raw["groups"]
    groups = []
    for i, g in enumerate(raw):
        try:
            groups.append(FeatureGroupSpec(name=str(g["name"]),
                                           offset=int(g["offset"]),
                                           length=int(g["length"]),
                                           point_mapped=bool(g.get("point_mapped", False))))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: group entry {i}: {exc!r}") from None
    return groups


def write_groups(groups, path):
    with open(path, "w") as fh:
        json.dump([g.to_dict() for g in groups], fh, indent=2)
        fh.write("\n")


def _read_table(path, parse):
    """Read an id-first CSV; returns (header names, ids, rows, problems)."""
    problems = []
    ids, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                problems.append(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
                continue
            ids.append(rec[0])
            try:
                rows.append([parse(v) for v in rec[1:]])
            except ValueError as exc:
                problems.append(f"{path}:{lineno}: {exc}")
    return header[1:], ids, rows, problems


def _parse_label(v):
    v = v.strip()
    if v not in ("0", "1"):
        raise ValueError(f"label must be 0 or 1, got {v!r}")
    return int(v)


def load_dataset(features_path, labels_path, groups_path) -> Dataset:
    """Load and validate a dataset; every problem found is reported at once."""
    fnames, fids, frows, problems = _read_table(features_path, float)
    anames, lids, lrows, lproblems = _read_table(labels_path, _parse_label)
    problems += lproblems
    try:
        groups = read_groups(groups_path)
    except DatasetError as exc:
        problems += exc.problems
        groups = []
    if problems:
        raise DatasetError(problems)

    features = np.array(frows, dtype=float).reshape(len(frows), len(fnames))
    labels = np.array(lrows, dtype=np.int8).reshape(len(lrows), len(anames))
    if len(fids) != len(lids):
        raise DatasetError(
            f"row-count mismatch: {features_path} has {len(fids)} rows, "
            f"{labels_path} has {len(lids)} rows")
    mismatched = [i for i, (a, b) in enumerate(zip(fids, lids)) if a != b]
    if mismatched:
        i = mismatched[0]
        raise DatasetError(f"instance id mismatch at data row {i + 1}: "
                           f"{fids[i]!r} vs {lids[i]!r} "
                           f"({len(mismatched)} mismatched rows)")
    for r, c in np.argwhere(~np.isfinite(features))[:10]:
        problems.append(f"{features_path}:{r + 2}: non-finite value in column {fnames[c]!r}")
    if problems:
        raise DatasetError(problems)
    return Dataset(features=features, labels=labels,
                   affordance_names=tuple(anames), groups=tuple(groups),
                   instance_ids=tuple(fids), feature_names=tuple(fnames))


def save_dataset(dataset, features_path, labels_path, groups_path=None):
    with open(features_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", *dataset.feature_names])
        for iid, row in zip(dataset.instance_ids, dataset.features):
            w.writerow([iid, *map(_fmt, row)])
    with open(labels_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", *dataset.affordance_names])
        for iid, row in zip(dataset.instance_ids, dataset.labels):
            w.writerow([iid, *(str(int(v)) for v in row)])
    if groups_path is not None:
        write_groups(dataset.groups, groups_path)


# --------------------------------------------------------- standardization

def fit_standardization(features) -> StandardizationParams:
    X = np.asarray(features, dtype=float)
    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population convention (ddof=0)
    std = np.where(std > 0, std, 1.0)
    return StandardizationParams(mean=mean, std=std)


def standardize(dataset):
    """Standardize every dimension to zero mean and unit population std.

    Returns ``(standardized_dataset, params)``. Zero-variance dimensions keep
    their slot (the output column is all zeros) and record std 1.
    """
    if dataset.standardized:
        raise ValueError("dataset is already standardized")
    params = fit_standardization(dataset.features)
    out = params.apply(dataset.features)
    # exact zeros for constant columns; (x - mean) may leave rounding residue
    out[:, np.ptp(dataset.features, axis=0) == 0] = 0.0
    return dataset.with_features(out, standardized=True), params


def apply_standardization(dataset, params):
    if dataset.standardized:
        raise ValueError("dataset is already standardized")
    return dataset.with_features(params.apply(dataset.features), standardized=True)


# ---------------------------------------------------------------- splitting

def _round_half_up(x):
    return int(math.floor(x + 0.5))


def stratified_train_count(n, ratio) -> int:
    """Training-side count for one class of size ``n`` (both sides keep >= 1)."""
    return min(max(_round_half_up(ratio * n), 1), n - 1)


def split_indices(labels, ratio, seed):
    labels = np.asarray(labels)
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) < 2 or len(neg) < 2:
        raise ValueError(f"stratified split needs >= 2 positives and >= 2 "
                         f"negatives, got {len(pos)} and {len(neg)}")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for members in (pos, neg):
        perm = rng.permutation(members)
        n_tr = stratified_train_count(len(members), ratio)
        train.append(perm[:n_tr])
        test.append(perm[n_tr:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(dataset, affordance, ratio, seed):
    tr, te = split_indices(dataset.label_column(affordance), ratio, seed)
    return dataset.subset(tr), dataset.subset(te)


def kfold_indices(labels, k, seed):
    """Stratified k-fold: list of ``(train_idx, val_idx)``, validation folds partition the rows."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) < k or len(neg) < k:
        raise ValueError(f"{k}-fold stratification needs >= {k} positives and "
                         f">= {k} negatives, got {len(pos)} and {len(neg)}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(pos), rng.permutation(neg)])
    fold_of = np.empty(len(labels), dtype=int)
    fold_of[order] = np.arange(len(order)) % k
    all_idx = np.arange(len(labels))
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def kfold(dataset, affordance, k, seed):
    return [(dataset.subset(tr), dataset.subset(va))
            for tr, va in kfold_indices(dataset.label_column(affordance), k, seed)]


# ---------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticSpec:
    n_per_class: tuple
    D: int
    informative_dims: tuple
    class_separation: float
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_per_class", tuple(int(n) for n in self.n_per_class))
        object.__setattr__(self, "informative_dims", tuple(int(j) for j in self.informative_dims))
        problems = []
        if len(self.n_per_class) != 2 or min(self.n_per_class) < 2:
            problems.append(f"n_per_class must be two counts >= 2, got {self.n_per_class}")
        if not self.informative_dims:
            problems.append("informative_dims is empty: class separation must act on some dimension")
        if any(not 0 <= j < self.D for j in self.informative_dims):
            problems.append(f"informative_dims must lie in [0, {self.D})")
        if len(set(self.informative_dims)) != len(self.informative_dims):
            problems.append("informative_dims contains duplicates")
        if not self.class_separation > 0:
            problems.append("class_separation must be > 0")
        if not self.noise_std > 0:
            problems.append("noise_std must be > 0")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        return {"n_per_class": list(self.n_per_class), "D": self.D,
                "informative_dims": list(self.informative_dims),
                "class_separation": self.class_separation,
                "noise_std": self.noise_std, "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "SyntheticSpec":
        return cls(**{k: d[k] for k in ("n_per_class", "D", "informative_dims",
                                         "class_separation", "noise_std", "seed")
                      if k in d})


def make_synthetic(spec):
    """Two-class Gaussian data separated along ``spec.informative_dims`` only.

    Class means sit at -/+ separation/2 (in units of ``noise_std``) on the
    informative dims and at 0 elsewhere. Rows are shuffled. Returns
    ``(dataset, informative_dims)``.
    """
    rng = np.random.default_rng(spec.seed)
    n_neg, n_pos = spec.n_per_class
    n = n_neg + n_pos
    y = np.concatenate([np.zeros(n_neg, dtype=np.int8), np.ones(n_pos, dtype=np.int8)])
    y = y[rng.permutation(n)]
    X = rng.normal(0.0, spec.noise_std, size=(n, spec.D))
    shift = (y - 0.5) * spec.class_separation * spec.noise_std
    X[:, list(spec.informative_dims)] += shift[:, None]
    ds = Dataset(features=X, labels=y[:, None], affordance_names=("synthetic",),
                 groups=(FeatureGroupSpec("features", 0, spec.D),),
                 instance_ids=tuple(f"obj{i:04d}" for i in range(n)))
    return ds, list(spec.informative_dims)


def make_synthetic_suite(n, D, informative, class_separation, noise_std=1.0,
                         seed=0, group_size=None):
    """Multi-affordance data: affordance ``a`` shifts the dims ``informative[a]``.

    ``informative`` maps affordance name -> list of dims. Labels are drawn
    independently and balanced (half positive, shuffled). Affordances whose dim
    sets overlap share the overlapping signal.
    """
    rng = np.random.default_rng(seed)
    names = tuple(informative)
    X = rng.normal(0.0, noise_std, size=(n, D))
    Y = np.zeros((n, len(names)), dtype=np.int8)
    for a, name in enumerate(names):
        y = (rng.permutation(n) < n // 2).astype(np.int8)
        Y[:, a] = y
        X[:, list(informative[name])] += ((y - 0.5) * class_separation * noise_std)[:, None]
    if group_size:
        groups = tuple(FeatureGroupSpec(f"g{i}", off, min(group_size, D - off))
                       for i, off in enumerate(range(0, D, group_size)))
    else:
        groups = (FeatureGroupSpec("features", 0, D),)
    return Dataset(features=X, labels=Y, affordance_names=names, groups=groups,
                   instance_ids=tuple(f"obj{i:04d}" for i in range(n)))


# ------------------------------------------------------- point-cloud maps

@dataclass(frozen=True, eq=False)
class PointCloudFeatureMap:
    instance_id: str
    points: np.ndarray
    assignments: dict

    @property
    def point_count(self) -> int:
        return self.points.shape[0]

    def check(self, groups):
        """Raise DatasetError unless every point-mapped group has valid bins."""
        problems = []
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            problems.append(f"{self.instance_id}: points must be P x 3, got {self.points.shape}")
        if self.point_count < 1:
            problems.append(f"{self.instance_id}: empty point cloud")
        for g in groups:
            if not g.point_mapped:
                continue
            bins = self.assignments.get(g.name)
            if bins is None:
                problems.append(f"{self.instance_id}: no assignment vector for "
                                f"point-mapped group {g.name!r}")
                continue
            if len(bins) != self.point_count:
                problems.append(f"{self.instance_id}: group {g.name!r} has "
                                f"{len(bins)} assignments for {self.point_count} points")
            elif len(bins) and (bins.min() < 0 or bins.max() >= g.length):
                problems.append(f"{self.instance_id}: group {g.name!r} bin index out of "
                                f"range [0, {g.length})")
        if problems:
            raise DatasetError(problems)


def load_cloud_map(path) -> PointCloudFeatureMap:
    with open(path) as fh:
        raw = json.load(fh)
    try:
        points = np.asarray(raw["points"], dtype=float).reshape(-1, 3)
        assignments = {name: np.asarray(b, dtype=int)
                       for name, b in raw["assignments"].items()}
        return PointCloudFeatureMap(str(raw["instance_id"]), points, assignments)
    except (KeyError, ValueError, TypeError) as exc:
        raise DatasetError(f"{path}: malformed point-cloud map: {exc!r}") from None


def save_cloud_map(cmap, path):
    with open(path, "w") as fh:
        json.dump({"instance_id": cmap.instance_id,
                   "points": cmap.points.tolist(),
                   "assignments": {k: [int(b) for b in v]
                                   for k, v in cmap.assignments.items()}}, fh)
