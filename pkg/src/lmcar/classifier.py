"""kNN classification in a learned (or PCA) space, scoring and grid search."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._pca import pca_project
from .analysis import DEFAULT_KEPT_THRESHOLD, kept_fraction, magnitude_profile
from .data import apply_standardization, kfold_indices, standardize
from .optimizer import TrainConfig, TrainedModel, train

__all__ = ["EvalReport", "knn_predict", "predict", "evaluate", "pca_project",
           "fit_baseline", "grid_scores", "cross_validate", "cross_validate_baseline"]

BASELINE_K = 3


@dataclass(frozen=True)
class EvalReport:
    f1: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    kept_fraction: float

    @classmethod
    def from_predictions(cls, truth, pred, kept_fraction=1.0) -> "EvalReport":
        truth = np.asarray(truth).astype(bool)
        pred = np.asarray(pred).astype(bool)
        if truth.size == 0:
            raise ValueError("cannot score an empty test set")
        tp = int(np.sum(pred & truth))
        fp = int(np.sum(pred & ~truth))
        tn = int(np.sum(~pred & ~truth))
        fn = int(np.sum(~pred & truth))
        return cls.from_counts(tp, fp, tn, fn, kept_fraction)

    @classmethod
    def from_counts(cls, tp, fp, tn, fn, kept_fraction=1.0) -> "EvalReport":
        denom = 2 * tp + fp + fn
        f1 = 2 * tp / denom if denom else 0.0
        accuracy = (tp + tn) / (tp + fp + tn + fn)
        return cls(f1, accuracy, tp, fp, tn, fn, float(kept_fraction))

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def predict(model: TrainedModel, queries) -> np.ndarray:
    """Binary kNN labels for a batch of standardized query rows."""
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    D = model.transform.shape[1]
    if Q.shape[1] != D:
        raise ValueError(f"query has {Q.shape[1]} dims, model expects {D}")
    Ztr = model.embed(model.train_features)
    Zq = model.embed(Q)
    dist = np.zeros((len(Zq), len(Ztr)))
    for a, b in zip(Zq.T, Ztr.T):
        diff = a[:, None] - b[None, :]
        dist += diff * diff
    k = min(model.config.k, len(Ztr))
    # stable sort: equal distances resolve to the lower training index
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = model.train_labels[nearest].astype(int)
    pos = votes.sum(1)
    out = (2 * pos > k).astype(np.int8)
    tied = 2 * pos == k
    out[tied] = votes[tied, 0]
    return out


def knn_predict(model: TrainedModel, query) -> int:
    q = np.asarray(query, dtype=float)
    if q.ndim != 1:
        raise ValueError("knn_predict takes a single D-vector; use predict for batches")
    return int(predict(model, q[None, :])[0])


def evaluate(model, test_features, test_labels, kept=None,
             threshold=DEFAULT_KEPT_THRESHOLD) -> EvalReport:
    """Score ``model`` on standardized test rows.

    ``kept`` overrides the kept-feature fraction (baselines use 1.0); by default
    it is read off the transform's column magnitudes.
    """
    pred = predict(model, test_features)
    if kept is None:
        kept = kept_fraction(magnitude_profile(model.transform), threshold)
    return EvalReport.from_predictions(test_labels, pred, kept)


def fit_baseline(dataset, affordance, pca_dim, k=BASELINE_K, standardization=None) -> TrainedModel:
    """Plain kNN (pca_dim=0) or kNN after projecting onto the top principal axes."""
    if not dataset.standardized:
        raise ValueError("fit_baseline expects a standardized dataset")
    a = dataset.affordance_index(affordance)
    basis = pca_project(dataset.features, pca_dim)
    return TrainedModel(transform=basis, train_features=dataset.features.copy(),
                        train_labels=dataset.labels[:, a].astype(np.int8),
                        config=TrainConfig(k=k, d=basis.shape[0], max_epochs=0),
                        loss_trace=[], standardization=standardization,
                        affordance=dataset.affordance_names[a], converged=True,
                        meta={"method": "knn", "pca_dim": int(pca_dim)})


# ------------------------------------------------------------- grid search

def _fold_data(train_set, tr_idx, va_idx):
    fold_tr = train_set.subset(tr_idx)
    fold_va = train_set.subset(va_idx)
    if train_set.standardized:
        return fold_tr, fold_va
    fold_tr, params = standardize(fold_tr)
    return fold_tr, apply_standardization(fold_va, params)


def _score_point(args):
    train_set, affordance, point, folds = args
    a = train_set.affordance_index(affordance)
    scores = []
    for tr_idx, va_idx in folds:
        fold_tr, fold_va = _fold_data(train_set, tr_idx, va_idx)
        if isinstance(point, TrainConfig):
            model = train(fold_tr, a, point)
        else:
            model = fit_baseline(fold_tr, a, point)
        pred = predict(model, fold_va.features)
        scores.append(EvalReport.from_predictions(fold_va.labels[:, a], pred).f1)
    return float(np.mean(scores))


def grid_scores(train_set, affordance, grid, folds=5, seed=0, n_jobs=1) -> list[float]:
    """Mean validation F1 per grid point over stratified folds.

    Grid points are TrainConfigs (metric learning) or ints (baseline PCA dims).
    Unstandardized input is standardized inside each fold with that fold's
    training statistics.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty parameter grid")
    fold_idx = kfold_indices(train_set.label_column(affordance), folds, seed)
    jobs = [(train_set, affordance, point, fold_idx) for point in grid]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            return list(pool.map(_score_point, jobs))
    return [_score_point(job) for job in jobs]


def select_best(grid, scores):
    """Highest mean F1; ties prefer larger lambda, then larger c, then grid order."""
    def key(item):
        pos, (point, score) = item
        if isinstance(point, TrainConfig):
            return (-score, -point.lam, -point.c, pos)
        return (-score, pos)
    return min(enumerate(zip(grid, scores)), key=key)[1][0]


def cross_validate(train_set, affordance, grid, folds=5, seed=0, n_jobs=1):
    """Pick the best grid point by mean validation F1 (see ``select_best``)."""
    grid = list(grid)
    if len(grid) == 1:
        return grid[0]
    return select_best(grid, grid_scores(train_set, affordance, grid, folds, seed, n_jobs))


def cross_validate_baseline(train_set, affordance, pca_dims, folds=5, seed=0, n_jobs=1) -> int:
    return cross_validate(train_set, affordance, [int(p) for p in pca_dims], folds, seed, n_jobs)


def config_grid(base: TrainConfig, c_values, lambda_values) -> list[TrainConfig]:
    """Cartesian (c, lambda) grid in row-major order over ``base``."""
    return [replace(base, c=float(c), lam=float(lam))
            for c in c_values for lam in lambda_values]
