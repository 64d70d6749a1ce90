"""Tied-weight autoencoders (zero-bias and affine) and a K-means baseline.

Weights are stored as a D x K matrix whose columns are the filters w_k.
All batch computations treat inputs as rows, so preactivations of a
batch ``X`` are ``X @ W (+ b)``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .activations import ActivationKind, act_backward, act_forward, act_second
from .errors import DimensionError


@dataclass(frozen=True)
class Regularizer:
    """Training regularizer.

    ``name`` is "none", "denoising" (zero-mask probability ``p``) or
    "contractive" (strength ``lam``, negative values allowed).
    """

    name: str = "none"
    p: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.name not in ("none", "denoising", "contractive"):
            raise ValueError(f"unknown regularizer {self.name!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"mask probability must lie in [0, 1], got {self.p}")
        if not np.isfinite(self.lam):
            raise ValueError("contraction strength must be finite")


NO_REG = Regularizer()


def Denoising(p):
    return Regularizer("denoising", p=float(p))


def Contractive(lam):
    return Regularizer("contractive", lam=float(lam))


@dataclass(frozen=True, eq=False)
class AutoencoderModel:
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    kind: ActivationKind
    tied: bool = field(default=True)

    def __post_init__(self):
        D, K = self.W.shape
        if self.b.shape != (K,) or self.c.shape != (D,):
            raise DimensionError(f"bias shapes {self.b.shape}, {self.c.shape} do not match W {self.W.shape}")
        if not self.tied:
            raise ValueError("only tied weights are supported")
        if self.kind.zero_bias and (np.any(self.b) or np.any(self.c)):
            raise ValueError(f"{self.kind.name} models have no biases; b and c must be zero")

    @property
    def n_visible(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]

    def with_params(self, W=None, b=None, c=None):
        return replace(
            self,
            W=self.W if W is None else W,
            b=self.b if b is None else b,
            c=self.c if c is None else c,
        )


def init_autoencoder(n_visible, n_hidden, kind, seed=0, init_std=None):
    """Gaussian weights with std ``1/sqrt(D)`` (unless given), zero biases.

    With unit-variance inputs this puts preactivations at roughly unit
    scale, so a threshold of 1 leaves a fraction of units active from the
    first step.
    """
    if init_std is None:
        init_std = 1.0 / np.sqrt(n_visible)
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, init_std, size=(n_visible, n_hidden))
    return AutoencoderModel(W, np.zeros(n_hidden), np.zeros(n_visible), kind)


def _as_batch(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.n_visible:
        raise DimensionError(f"expected inputs of dimension {model.n_visible}, got {X.shape[1]}")
    return X, single


def preactivation(model, X):
    return X @ model.W + model.b


def encode(model, x, mode="train"):
    """Hidden code of ``x`` (a vector or a batch of rows).

    ``mode="infer"`` always uses the zero-bias ReLU ``max(0, W^T x)``,
    whatever activation the model was trained with.
    """
    X, single = _as_batch(model, x)
    if mode == "train":
        H = act_forward(model.kind, preactivation(model, X))
    elif mode == "infer":
        H = np.maximum(X @ model.W, 0.0)
    else:
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    return H[0] if single else H


def reconstruct(model, x):
    """Tied-weight reconstruction ``sum_k h_k w_k + c``."""
    X, single = _as_batch(model, x)
    R = act_forward(model.kind, preactivation(model, X)) @ model.W.T + model.c
    return R[0] if single else R


def corruption_mask(shape, p, seed):
    """Keep-mask for zero-masking noise: each entry dropped with probability p."""
    rng = np.random.default_rng(seed)
    return (rng.random(shape) >= p).astype(np.float64)


def loss_and_grads(model, batch, reg=NO_REG, seed=0):
    """Mean squared reconstruction error (plus penalty) and its exact gradients.

    Returns ``(loss, {"W": ..., "b": ..., "c": ...})``.  The reconstruction
    target is always the clean batch; denoising only corrupts the input.
    For zero-bias kinds the bias gradients are identically zero.
    """
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DimensionError("loss_and_grads needs a non-empty batch")
    if X.shape[1] != model.n_visible:
        raise DimensionError(f"expected inputs of dimension {model.n_visible}, got {X.shape[1]}")
    N = X.shape[0]
    W, kind = model.W, model.kind

    X_in = X * corruption_mask(X.shape, reg.p, seed) if reg.name == "denoising" else X

    A = X_in @ W + model.b
    H = act_forward(kind, A)
    E = H @ W.T + model.c - X
    loss = float(np.einsum("ij,ij->", E, E)) / N

    dR = (2.0 / N) * E
    dH = dR @ W
    dA = dH * act_backward(kind, A)
    gW = dR.T @ H + X_in.T @ dA
    gb = dA.sum(axis=0)
    gc = dR.sum(axis=0)

    if reg.name == "contractive" and reg.lam != 0.0:
        d1 = act_backward(kind, A)
        col_sq = np.einsum("ij,ij->j", W, W)
        jac_sq = d1 * d1
        loss += reg.lam * float(jac_sq.sum(axis=0) @ col_sq) / N
        # d/dA of d1^2 * |w_k|^2 = 2 d1 d2 |w_k|^2
        dA_pen = (reg.lam / N) * 2.0 * d1 * act_second(kind, A) * col_sq
        gW += (2.0 * reg.lam / N) * W * jac_sq.sum(axis=0) + X_in.T @ dA_pen
        gb += dA_pen.sum(axis=0)

    if kind.zero_bias:
        gb = np.zeros_like(gb)
        gc = np.zeros_like(gc)
    return loss, {"W": gW, "b": gb, "c": gc}


# -- K-means --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KMeansModel:
    """Centroids stored as columns (D x K), mirroring AutoencoderModel.W."""

    centroids: np.ndarray

    @property
    def n_visible(self):
        return self.centroids.shape[0]

    @property
    def n_hidden(self):
        return self.centroids.shape[1]


def _sq_distances(X, C):
    # |x|^2 - 2 x.c + |c|^2, clipped against cancellation
    d = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C + (C * C).sum(axis=0)[None, :]
    return np.maximum(d, 0.0)


def kmeans_assign(model, X):
    return _sq_distances(np.atleast_2d(X), model.centroids).argmin(axis=1)


def kmeans_distortion(model, X):
    d = _sq_distances(np.atleast_2d(X), model.centroids)
    return float(d.min(axis=1).mean())


def kmeans_train(X, K, iters=10, seed=0):
    """Lloyd's algorithm seeded with K distinct random data points.

    An emptied cluster is re-seeded with the point currently farthest
    from its own centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if K < 1 or K > N:
        raise DimensionError(f"need 1 <= K <= N, got K={K}, N={N}")
    rng = np.random.default_rng(seed)
    C = X[rng.choice(N, size=K, replace=False)].T.copy()
    for _ in range(iters):
        d = _sq_distances(X, C)
        assign = d.argmin(axis=1)
        counts = np.bincount(assign, minlength=K)
        sums = np.zeros((K, X.shape[1]))
        np.add.at(sums, assign, X)
        nonempty = counts > 0
        C[:, nonempty] = (sums[nonempty] / counts[nonempty, None]).T
        if not nonempty.all():
            own = d[np.arange(N), assign]
            taken = set()
            for k in np.flatnonzero(~nonempty):
                order = np.argsort(own, kind="stable")[::-1]
                j = next(int(i) for i in order if int(i) not in taken)
                taken.add(j)
                C[:, k] = X[j]
                own[j] = -1.0
    return KMeansModel(C)
