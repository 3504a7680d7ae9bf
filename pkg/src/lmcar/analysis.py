"""Reading feature importance and affordance similarity off learned transforms.

The column norms of a transform are its magnitude profile. Profiles are
summarized per feature group, and the spread of profiles over repeated runs is
modelled by a diagonal Gaussian so that affordances can be compared with the
(asymmetric) KL divergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_KEPT_THRESHOLD = 1e-3
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class MagnitudeProfile:
    column_norms: np.ndarray
    normalized: np.ndarray


def magnitude_profile(L) -> MagnitudeProfile:
    norms = np.linalg.norm(np.asarray(L, dtype=float), axis=0)
    total = norms.sum()
    if not total > 0:
        raise ValueError("transform is identically zero; magnitude profile undefined")
    return MagnitudeProfile(norms, norms / total)


def profile_from_normalized(weights) -> MagnitudeProfile:
    """Wrap an already-averaged weight vector (e.g. a mean over runs)."""
    w = np.asarray(weights, dtype=float)
    if (w < 0).any() or not w.sum() > 0:
        raise ValueError("weights must be non-negative with a positive sum")
    return MagnitudeProfile(w.copy(), w / w.sum())


def kept_fraction(profile, rel_threshold=DEFAULT_KEPT_THRESHOLD) -> float:
    """Share of columns whose norm exceeds ``rel_threshold`` times the largest norm."""
    if not 0 < rel_threshold < 1:
        raise ValueError(f"relative threshold must be in (0, 1), got {rel_threshold}")
    norms = profile.column_norms
    return float(np.mean(norms > rel_threshold * norms.max()))


@dataclass(frozen=True)
class GroupStat:
    name: str
    mass: float
    kl_vs_uniform: float
    zero_mass: bool = False


@dataclass(frozen=True)
class GroupSummary:
    groups: tuple

    def masses(self) -> np.ndarray:
        return np.array([g.mass for g in self.groups])

    def kls(self) -> np.ndarray:
        return np.array([g.kl_vs_uniform for g in self.groups])

    def __getitem__(self, name) -> GroupStat:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)


def discrete_kl_vs_uniform(weights) -> float:
    """KL(p || uniform) in nats for non-negative ``weights`` renormalized to p."""
    w = np.asarray(weights, dtype=float)
    p = w / w.sum()
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] * len(p))))


def group_summary(profile, groups) -> GroupSummary:
    stats = []
    for g in groups:
        block = profile.normalized[g.offset:g.offset + g.length]
        mass = float(block.sum())
        if mass > 0:
            stats.append(GroupStat(g.name, mass, max(discrete_kl_vs_uniform(block), 0.0)))
        else:
            stats.append(GroupStat(g.name, 0.0, 0.0, zero_mass=True))
    return GroupSummary(tuple(stats))


@dataclass(frozen=True, eq=False)
class GaussianMagnitudeModel:
    mean: np.ndarray
    variance: np.ndarray
    n_runs: int = 0
    floor: float = VARIANCE_FLOOR
    convention: str = "population"


def fit_gaussian(profiles, floor=VARIANCE_FLOOR) -> GaussianMagnitudeModel:
    """Per-dimension mean and population variance of normalized profiles."""
    profiles = list(profiles)
    if len(profiles) < 2:
        raise ValueError(f"need at least 2 profiles to fit a Gaussian, got {len(profiles)}")
    P = np.stack([p.normalized for p in profiles])
    return GaussianMagnitudeModel(mean=P.mean(0), variance=np.maximum(P.var(0), floor),
                                  n_runs=len(profiles), floor=floor)


def kl_gaussian(P, Q) -> float:
    """KL(P || Q) in nats between diagonal Gaussians."""
    if P.mean.shape != Q.mean.shape:
        raise ValueError(f"dimension mismatch: {P.mean.shape} vs {Q.mean.shape}")
    ratio = P.variance / Q.variance
    dmu = Q.mean - P.mean
    return float(0.5 * np.sum(ratio + dmu * dmu / Q.variance - 1.0 - np.log(ratio)))


@dataclass(frozen=True, eq=False)
class AssociationTable:
    names: tuple
    kl: np.ndarray
    top3: dict

    def rows(self):
        for name in self.names:
            yield name, self.top3[name]


def associate(models, n_neighbors=3) -> AssociationTable:
    """Asymmetric KL table between per-affordance models (row = P, column = Q).

    ``models`` maps affordance name -> GaussianMagnitudeModel. Rows and columns
    are sorted by name; neighbour ties break by name.
    """
    if len(models) < 2:
        raise ValueError("association needs at least two affordances")
    names = tuple(sorted(models))
    A = len(names)
    kl = np.zeros((A, A))
    for a in range(A):
        for b in range(A):
            if a != b:
                kl[a, b] = max(kl_gaussian(models[names[a]], models[names[b]]), 0.0)
    top = {}
    for a, name in enumerate(names):
        others = sorted((kl[a, b], names[b]) for b in range(A) if b != a)
        top[name] = [other for _, other in others[:n_neighbors]]
    return AssociationTable(names, kl, top)


def format_association(table) -> str:
    """Plain-text nearest-neighbour table: affordance, NN1, NN2, NN3."""
    k = max(len(v) for v in table.top3.values())
    header = ["Affordance"] + [f"{i + 1}." for i in range(k)]
    body = [[name] + list(nbrs) + [""] * (k - len(nbrs)) for name, nbrs in table.rows()]
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), "  ".join("-" * w for w in widths)]
    lines += [fmt.format(*r) for r in body]
    return "\n".join(line.rstrip() for line in lines) + "\n"
