"""Contrast normalization and PCA projection / whitening."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

NORM_FLOOR = 1e-8
EIGEN_FLOOR = 1e-8


def contrast_normalize(X):
    """Remove each row's mean and scale it to unit Euclidean norm.

    Rows whose norm after mean removal falls below 1e-8 become zero.
    Normalization runs over the whole row (all channels together).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DimensionError(f"contrast_normalize needs a non-empty 2-D matrix, got shape {X.shape}")
    if X.shape[1] < 2:
        raise DimensionError("contrast_normalize needs at least 2 dimensions per row")
    centered = X - X.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    degenerate = norms[:, 0] < NORM_FLOOR
    out = centered / np.where(degenerate[:, None], 1.0, norms)
    out[degenerate] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    """A fitted PCA projection, optionally rescaling each component to unit variance.

    ``basis`` holds the retained eigenvectors as columns (D x R) and
    ``eigenvalues`` their variances in non-increasing order.
    """

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray
    whiten: bool = True
    epsilon: float = EIGEN_FLOOR

    @property
    def input_dim(self):
        return self.basis.shape[0]

    @property
    def output_dim(self):
        return self.basis.shape[1]

    def _scale(self):
        if self.whiten:
            return np.sqrt(self.eigenvalues + self.epsilon)
        return np.ones_like(self.eigenvalues)

    @classmethod
    def identity(cls, dim):
        """Transform that leaves ``dim``-dimensional data unchanged."""
        return cls(np.zeros(dim), np.eye(dim), np.ones(dim), whiten=False)


def _retained_count(eigenvalues, variance_retained):
    total = eigenvalues.sum()
    cumulative = np.cumsum(eigenvalues)
    # relative slack absorbs rounding in the cumulative sum; ties go to the smaller count
    target = variance_retained * total - 1e-12 * total
    return int(np.searchsorted(cumulative, target, side="left")) + 1


def pca_fit(X, variance_retained=0.99, whiten=True, epsilon=EIGEN_FLOOR):
    """Fit a PCA transform on the rows of ``X``.

    Keeps the smallest number of leading components whose eigenvalues
    account for at least ``variance_retained`` of the total variance.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DimensionError(f"pca_fit needs at least 2 rows, got shape {X.shape}")
    if not 0.0 < variance_retained <= 1.0:
        raise ValueError(f"variance_retained must lie in (0, 1], got {variance_retained}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    if evals.sum() <= 0:
        raise DimensionError("data has zero variance; nothing to project")
    R = min(_retained_count(evals, variance_retained), len(evals))
    evals = np.maximum(evals[:R], epsilon)
    basis = evecs[:, :R]
    # sign convention: largest-magnitude entry of each eigenvector is positive
    pivots = np.abs(basis).argmax(axis=0)
    signs = np.sign(basis[pivots, np.arange(R)])
    basis = basis * np.where(signs == 0, 1.0, signs)
    return WhiteningTransform(mean, np.ascontiguousarray(basis), evals, bool(whiten), float(epsilon))


def pca_apply(T, X):
    """Project ``X`` onto the retained components (and whiten if enabled)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = np.atleast_2d(X)
    if X2.shape[1] != T.input_dim:
        raise DimensionError(f"expected {T.input_dim} columns, got {X2.shape[1]}")
    Y = (X2 - T.mean) @ T.basis / T._scale()
    return Y[0] if single else Y


def pca_invert(T, Y):
    """Map codes back to input space; ``pca_apply(T, pca_invert(T, Y)) == Y``."""
    Y = np.asarray(Y, dtype=np.float64)
    single = Y.ndim == 1
    Y2 = np.atleast_2d(Y)
    if Y2.shape[1] != T.output_dim:
        raise DimensionError(f"expected {T.output_dim} columns, got {Y2.shape[1]}")
    X = (Y2 * T._scale()) @ T.basis.T + T.mean
    return X[0] if single else X
