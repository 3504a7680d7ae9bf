"""Large-margin metric learning with a column-wise group-sparsity penalty.

The objective for a linear transform ``L`` (d x D) is

    sum_{i~>j} w_i |L(x_i - x_j)|^2
  + c * sum_{i~>j, l} w_i y_il h(|L(x_i - x_j)|^2 - |L(x_i - x_l)|^2 + 1)
  + lam * sum_cols sqrt(|L_col|^2 + norm_eps)

where ``i~>j`` runs over the k same-class target neighbours of ``i`` (chosen
once, in the input space), ``y_il`` is 1 when ``l`` has a different label than
``i``, ``w_i = N / N_class(i)`` and ``h`` is the quadratically smoothed hinge.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ._pca import pca_project
from .data import StandardizationParams

logger = logging.getLogger(__name__)

MARGIN = 1.0
MAX_HALVINGS = 30
STEP_GROWTH = 1.05


class NumericalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    k: int = 3
    c: float = 1.0
    lam: float = 0.1
    d: int = 3
    max_epochs: int = 1000
    init_step: float = 1e-3
    tol: float = 1e-5
    norm_eps: float = 1e-8
    seed: int = 0
    init: str = "pca"
    lambda_units: str = "pull_mass"

    def __post_init__(self):
        problems = []
        if self.k < 1:
            problems.append(f"k must be >= 1, got {self.k}")
        if self.c < 0:
            problems.append(f"c must be >= 0, got {self.c}")
        if self.lam < 0:
            problems.append(f"lambda must be >= 0, got {self.lam}")
        if self.d < 1:
            problems.append(f"d must be >= 1, got {self.d}")
        if not self.init_step > 0:
            problems.append("init_step must be > 0")
        if not self.norm_eps > 0:
            problems.append("norm_eps must be > 0")
        if self.max_epochs < 0:
            problems.append("max_epochs must be >= 0")
        if self.lambda_units not in ("pull_mass", "absolute"):
            problems.append(f"unknown lambda_units {self.lambda_units!r}")
        if self.init not in ("pca", "random"):
            problems.append(f"unknown init {self.init!r}")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class TripleSet:
    """Target-neighbour pairs ``(i, j)``; impostors of ``i`` are all other-label rows."""

    target_pairs: np.ndarray
    labels: np.ndarray

    @property
    def n_pairs(self) -> int:
        return len(self.target_pairs)

    def impostor_mask(self) -> np.ndarray:
        i = self.target_pairs[:, 0]
        return self.labels[i][:, None] != self.labels[None, :]


@dataclass(eq=False)
class TrainedModel:
    transform: np.ndarray
    train_features: np.ndarray
    train_labels: np.ndarray
    config: TrainConfig
    loss_trace: list
    standardization: StandardizationParams | None = None
    affordance: str = ""
    converged: bool = False
    warning: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.transform = np.asarray(self.transform, dtype=float)
        if not np.isfinite(self.transform).all():
            raise NumericalError("transform has non-finite entries")
        d, D = self.transform.shape
        if d > D:
            raise ValueError(f"transform is {d} x {D}; output dim exceeds input dim")
        if self.train_features.shape[1] != D:
            raise ValueError(f"transform expects D={D}, training features have "
                             f"{self.train_features.shape[1]} columns")

    def embed(self, features) -> np.ndarray:
        return np.asarray(features, dtype=float) @ self.transform.T


# ------------------------------------------------------------ building blocks

def target_neighbors(features, labels, k) -> TripleSet:
    """k nearest same-class rows of each row in the given (untransformed) space.

    Ties go to the lower row index. Classes smaller than k+1 contribute all
    their other members.
    """
    X = np.asarray(features, dtype=float)
    labels = np.asarray(labels)
    pairs = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < 2:
            raise ValueError(f"class {cls} has a single member; target neighbours undefined")
        kk = min(k, len(members) - 1)
        dist = _sq_dists(X[members])
        np.fill_diagonal(dist, np.inf)
        order = np.argsort(dist, axis=1, kind="stable")[:, :kk]
        for row, i in enumerate(members):
            pairs.extend((i, members[c]) for c in order[row])
    pairs.sort()
    return TripleSet(np.array(pairs, dtype=int).reshape(-1, 2), labels.copy())


def class_weights(labels) -> np.ndarray:
    labels = np.asarray(labels)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise ValueError("class weights need both classes to be non-empty")
    return len(labels) / counts[inverse].astype(float)


def smooth_hinge(z):
    """0 for z <= 0, z^2/2 on (0, 1), z - 1/2 for z >= 1."""
    z = np.asarray(z, dtype=float)
    t = np.clip(z, 0.0, 1.0)
    out = t * (z - 0.5 * t)
    return out if out.ndim else float(out)


def smooth_hinge_grad(z):
    out = np.clip(np.asarray(z, dtype=float), 0.0, 1.0)
    return out if out.ndim else float(out)


def _sq_dists(Z):
    # coordinate-wise accumulation: exact differences, no Gram-matrix cancellation
    dist = np.zeros((len(Z), len(Z)))
    for col in Z.T:
        diff = col[:, None] - col[None, :]
        dist += diff * diff
    return dist


class _Objective:
    """Loss and gradient over a fixed triple set; precomputes the index data."""

    def __init__(self, features, labels, triples, weights, config):
        self.X = np.asarray(features, dtype=float)
        self.n = len(self.X)
        labels = np.asarray(labels)
        self.pi = triples.target_pairs[:, 0]
        self.pj = triples.target_pairs[:, 1]
        self.w = np.asarray(weights, dtype=float)[self.pi]
        # flat (pair, impostor) list: every l labelled differently from i
        pair_idx, imp_idx = np.nonzero(labels[self.pi][:, None] != labels[None, :])
        self.tp = pair_idx
        self.ti = self.pi[pair_idx]
        self.tl = imp_idx
        self.tw = self.w[pair_idx]
        self.t_flat = self.ti * self.n + self.tl
        self.p_flat = self.pi * self.n + self.pj
        self.c = float(config.c)
        self.lam = effective_lambda(config, self.w)
        self.eps = float(config.norm_eps)
        self._cache = None

    def _geometry(self, L):
        if self._cache is not None and np.array_equal(self._cache[0], L):
            return self._cache[1]
        # overflow is detected by the callers, so keep numpy quiet about it
        with np.errstate(over="ignore", invalid="ignore"):
            geom = self._compute_geometry(L)
        self._cache = (L.copy(), geom)
        return geom

    def _compute_geometry(self, L):
        Z = self.X @ L.T
        dist = _sq_dists(Z).ravel()
        d_target = dist.take(self.p_flat)
        hinge_arg = d_target.take(self.tp) - dist.take(self.t_flat) + MARGIN
        return Z, d_target, hinge_arg

    def terms(self, L):
        _, d_target, hinge_arg = self._geometry(L)
        pull = float(self.w @ d_target)
        push = self.c * float(self.tw @ smooth_hinge(hinge_arg)) if self.c > 0 else 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            reg = self.lam * float(np.sqrt((L * L).sum(0) + self.eps).sum())
        return {"pull": pull, "push": push, "regularizer": reg}

    def value(self, L):
        t = self.terms(L)
        return t["pull"] + t["push"] + t["regularizer"]

    def checked_value(self, L):
        t = self.terms(L)
        for name, v in t.items():
            if not np.isfinite(v):
                raise NumericalError(f"non-finite {name} term in loss: {v}")
        return t["pull"] + t["push"] + t["regularizer"]

    def gradient(self, L):
        Z, _, hinge_arg = self._geometry(L)
        n = self.n
        # A[a, b] collects the coefficient of (x_a - x_b)(x_a - x_b)^T
        pair_coef = self.w.copy()
        A = np.zeros(n * n)
        if self.c > 0:
            g = self.c * self.tw * smooth_hinge_grad(hinge_arg)
            active = g != 0
            pair_coef += np.bincount(self.tp[active], g[active], minlength=len(self.w))
            A -= np.bincount(self.t_flat[active], g[active], minlength=n * n)
        A += np.bincount(self.p_flat, pair_coef, minlength=n * n)
        A = A.reshape(n, n)
        S = A + A.T
        lap = np.diag(S.sum(1)) - S
        G = 2.0 * ((Z.T @ lap) @ self.X)
        G += self.lam * L / np.sqrt((L * L).sum(0) + self.eps)
        if not np.isfinite(G).all():
            raise NumericalError("non-finite entry in loss gradient")
        return G


def effective_lambda(config, pair_weights) -> float:
    """Regularization weight as it enters the objective.

    With ``lambda_units="pull_mass"`` the configured value is multiplied by the
    total pull-term weight (sum of w_i over target pairs, about 2kN), so one
    lambda value gives comparable sparsity across dataset sizes.
    """
    if config.lambda_units == "absolute":
        return float(config.lam)
    return float(config.lam) * float(np.sum(pair_weights))


def loss(L, features, labels, triples, weights, config) -> float:
    return _Objective(features, labels, triples, weights, config).checked_value(np.asarray(L, float))


def loss_terms(L, features, labels, triples, weights, config) -> dict:
    return _Objective(features, labels, triples, weights, config).terms(np.asarray(L, float))


def gradient(L, features, labels, triples, weights, config) -> np.ndarray:
    return _Objective(features, labels, triples, weights, config).gradient(np.asarray(L, float))


# ------------------------------------------------------------------ training

def initial_transform(features, config) -> np.ndarray:
    D = features.shape[1]
    if config.d > D:
        raise ValueError(f"output dim d={config.d} exceeds input dim D={D}")
    if config.init == "pca":
        return pca_project(features, config.d)
    rng = np.random.default_rng(config.seed)
    return rng.normal(0.0, 1.0 / np.sqrt(D), size=(config.d, D))


def fit_transform(features, labels, config, L0=None):
    """Gradient descent with backtracking on the regularized objective.

    Returns ``(L, loss_trace, converged, warning)``. ``loss_trace[0]`` is the
    loss at the initial transform; every later entry is an accepted step, so
    the trace never increases.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    triples = target_neighbors(X, y, config.k)
    obj = _Objective(X, y, triples, class_weights(y), config)

    L = initial_transform(X, config) if L0 is None else np.array(L0, dtype=float)
    f = obj.checked_value(L)
    G = obj.gradient(L)
    trace = [f]
    step = config.init_step
    converged, warning = False, None
    for _ in range(config.max_epochs):
        for _ in range(MAX_HALVINGS + 1):
            L_new = L - step * G
            f_new = obj.value(L_new)
            if np.isfinite(f_new) and f_new <= f:
                break
            step *= 0.5
        else:
            warning = "step underflow: no decreasing step after 30 halvings"
            logger.warning(warning)
            break
        rel_change = (f - f_new) / max(abs(f), np.finfo(float).tiny)
        L, f = L_new, f_new
        trace.append(f)
        step *= STEP_GROWTH
        if rel_change < config.tol:
            converged = True
            break
        G = obj.gradient(L)
    return L, trace, converged, warning


def train(dataset, affordance, config, standardization=None) -> TrainedModel:
    if not dataset.standardized:
        raise ValueError("train expects a standardized dataset")
    a = dataset.affordance_index(affordance)
    y = dataset.labels[:, a].astype(np.int8)
    if y.min() == y.max():
        raise ValueError(f"affordance {dataset.affordance_names[a]!r} has a single class "
                         f"in the training data")
    L, trace, converged, warning = fit_transform(dataset.features, y, config)
    return TrainedModel(transform=L, train_features=dataset.features.copy(),
                        train_labels=y, config=config, loss_trace=trace,
                        standardization=standardization,
                        affordance=dataset.affordance_names[a],
                        converged=converged, warning=warning)


# ------------------------------------------------------------- serialization

def _hex_matrix(M):
    return [[float(v).hex() for v in row] for row in np.atleast_2d(M)]


def _unhex_matrix(rows):
    return np.array([[float.fromhex(v) for v in row] for row in rows], dtype=float)


def model_to_dict(model) -> dict:
    return {
        "affordance": model.affordance,
        "transform": _hex_matrix(model.transform),
        "train_features": _hex_matrix(model.train_features),
        "train_labels": [int(v) for v in model.train_labels],
        "config": model.config.to_dict(),
        "loss_trace": [float(v).hex() for v in model.loss_trace],
        "standardization": (model.standardization.to_dict()
                            if model.standardization is not None else None),
        "converged": model.converged,
        "warning": model.warning,
        "meta": model.meta,
    }


def model_from_dict(d) -> TrainedModel:
    std = d.get("standardization")
    return TrainedModel(
        transform=_unhex_matrix(d["transform"]),
        train_features=_unhex_matrix(d["train_features"]),
        train_labels=np.array(d["train_labels"], dtype=np.int8),
        config=TrainConfig.from_dict(d["config"]),
        loss_trace=[float.fromhex(v) for v in d["loss_trace"]],
        standardization=StandardizationParams.from_dict(std) if std else None,
        affordance=d.get("affordance", ""),
        converged=d.get("converged", False),
        warning=d.get("warning"),
        meta=d.get("meta", {}),
    )


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
