import numpy as np


def pca_project(features, d):
    """Top-``d`` principal axes of ``features`` as the rows of a d x D matrix.

    Each axis is sign-fixed so that its first nonzero coordinate is positive.
    ``d = 0`` means no projection and returns the D x D identity.
    """
    X = np.asarray(features, dtype=float)
    D = X.shape[1]
    if d < 0 or d > D:
        raise ValueError(f"PCA dimension must be in [0, {D}], got {d}")
    if d == 0:
        return np.eye(D)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(len(X), 1)
    evals, evecs = np.linalg.eigh(cov)
    # eigh returns ascending eigenvalues; stable sort keeps ties deterministic
    order = np.argsort(-evals, kind="stable")[:d]
    basis = evecs[:, order].T.copy()
    for row in basis:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if len(nz) and row[nz[0]] < 0:
            row *= -1.0
    return basis
