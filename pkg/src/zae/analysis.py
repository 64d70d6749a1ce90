"""Active sets, fixed points, frame diagnostics, bias histograms, filter images."""

import math
from dataclasses import dataclass

import numpy as np

from .activations import act_forward
from .errors import DimensionError, NumericalError
from .models import KMeansModel, _as_batch
from .preprocessing import pca_invert

UNIT_EIGEN_TOL = 1e-6


def active_set(model, x):
    """Sorted indices of hidden units with a non-zero response to ``x``.

    Affine kinds use ``w_k.x + b_k > 0``; zero-bias kinds use the
    activation itself.
    """
    X, _ = _as_batch(model, x)
    a = X[0] @ model.W + model.b
    if model.kind.zero_bias:
        mask = act_forward(model.kind, a) != 0
    else:
        mask = a > 0
    return np.flatnonzero(mask)


@dataclass(frozen=True, eq=False)
class FixedPointReport:
    residual_norm: float
    nullspace_dim: int
    eigenvalues_of_WWt: np.ndarray
    active: np.ndarray
    orthonormality_error: float


def fixed_point_report(model, x):
    """How far ``x`` is from being a fixed point of the piecewise-linear map.

    Uses the active-set form ``W_S (W_S^T x + b_S)``; the null-space
    dimension counts eigenvalues of ``W_S W_S^T`` within 1e-6 of one.
    """
    if model.kind.name == "sigmoid":
        raise ValueError("fixed-point analysis applies to ReLU-type and zero-bias models")
    x = np.asarray(x, dtype=np.float64)
    S = active_set(model, x)
    if S.size == 0:
        return FixedPointReport(float(np.linalg.norm(x)), 0, np.zeros(0), S, 0.0)
    WS = model.W[:, S]
    b = np.zeros(S.size) if model.kind.zero_bias else model.b[S]
    code = WS.T @ x + b
    residual = float(np.linalg.norm(WS @ code - x))
    evals = np.linalg.eigvalsh(WS @ WS.T)[::-1]
    nullspace = int(np.sum(np.abs(evals - 1.0) <= UNIT_EIGEN_TOL))
    gram = WS.T @ WS - np.eye(S.size)
    return FixedPointReport(residual, nullspace, evals, S, float(np.linalg.norm(gram)))


def sigmoid_binary_reconstruct(model, x):
    """Sum of the weight vectors whose unit is 'on' under a hard 0/1 gate."""
    X, _ = _as_batch(model, x)
    on = X[0] @ model.W + model.b >= 0
    return model.W[:, on].sum(axis=1)


@dataclass(frozen=True, eq=False)
class FrameReport:
    frame_operator: np.ndarray
    dual_frame: np.ndarray
    parseval_ratios: np.ndarray

    @property
    def parseval_ratio_stats(self):
        r = self.parseval_ratios
        return float(r.min()), float(np.median(r)), float(r.max())


def parseval_ratios(model, probe):
    """Per-row ``sum_{k in S(x)} (w_k.x)^2 / |x|^2``."""
    P, _ = _as_batch(model, probe)
    norms = (P * P).sum(axis=1)
    if np.any(norms == 0):
        raise DimensionError("probe rows must be non-zero")
    A = P @ model.W + model.b
    if model.kind.zero_bias:
        active = act_forward(model.kind, A) != 0
    else:
        active = A > 0
    lin = P @ model.W
    return (np.where(active, lin * lin, 0.0)).sum(axis=1) / norms


def frame_report(model, probe):
    """Frame operator ``sum_k w_k w_k^T``, its dual frame and Parseval ratios."""
    W = model.W
    S = W @ W.T
    S = 0.5 * (S + S.T)
    evals = np.linalg.eigvalsh(S)
    if evals[0] <= 1e-12 * max(evals[-1], 1.0):
        raise NumericalError("weights do not span data space")
    dual = np.linalg.solve(S, W)
    return FrameReport(S, dual, parseval_ratios(model, probe))


@dataclass(frozen=True, eq=False)
class BiasHistogram:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    fraction_negative: float

    def rows(self):
        return [(float(lo), float(hi), int(n)) for lo, hi, n in zip(self.edges[:-1], self.edges[1:], self.counts)]


def bias_histogram(model, bins=20):
    """Histogram of the hidden biases with their mean and negative fraction.

    Constant biases (including the all-zero biases of zero-bias models)
    collapse into a single degenerate bin.
    """
    b = np.asarray(model.b, dtype=np.float64)
    if b.size and b.min() == b.max():
        edges = np.array([b[0], b[0]])
        counts = np.array([b.size])
    else:
        counts, edges = np.histogram(b, bins=bins)
    mean = float(b.mean()) if b.size else 0.0
    frac = float(np.mean(b < 0)) if b.size else 0.0
    return BiasHistogram(edges, counts, mean, frac)


# -- filter images ----------------------------------------------------------


@dataclass(frozen=True)
class FilterLayout:
    """How a back-projected filter vector folds into images.

    Vectors are laid out as ``frames`` x ``channels`` x ``height`` x
    ``width``; channels must be 1 or 3.
    """

    height: int
    width: int
    channels: int = 1
    frames: int = 1

    @property
    def size(self):
        return self.frames * self.channels * self.height * self.width


def filter_vectors(model, transform=None):
    """Filters in input space, one per row (the linear part of pca_invert)."""
    F = model.centroids.T if isinstance(model, KMeansModel) else model.W.T
    if transform is None:
        return F.copy()
    if transform.output_dim != F.shape[1]:
        raise DimensionError(f"transform emits {transform.output_dim} dims, model expects {F.shape[1]}")
    return pca_invert(transform, F) - transform.mean


def tile_filters(vectors, layout, frame=0, border=1):
    """Tile filters into a ceil(sqrt(K))^2 grid; returns an (H, W, 3) float image.

    Each filter is min-max normalized to [0, 1] on its own.
    """
    vectors = np.atleast_2d(vectors)
    K = vectors.shape[0]
    if vectors.shape[1] != layout.size:
        raise DimensionError(f"filters have {vectors.shape[1]} entries, layout expects {layout.size}")
    if not 0 <= frame < layout.frames:
        raise ValueError(f"frame {frame} outside 0..{layout.frames - 1}")
    side = max(1, math.ceil(math.sqrt(K)))
    h, w = layout.height, layout.width
    grid = np.full((side * (h + border) + border, side * (w + border) + border, 3), 0.5)
    cube = vectors.reshape(K, layout.frames, layout.channels, h, w)
    for k in range(K):
        f = cube[k]
        lo, hi = f.min(), f.max()
        img = (f[frame] - lo) / (hi - lo) if hi > lo else np.zeros_like(f[frame])
        img = np.repeat(img, 3, axis=0) if layout.channels == 1 else img
        r, c = divmod(k, side)
        top, left = border + r * (h + border), border + c * (w + border)
        grid[top:top + h, left:left + w] = img.transpose(1, 2, 0)
    return grid


def write_ppm(path, image):
    """Write an (H, W, 3) float image in [0, 1] as binary PPM (P6)."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    # exactly one whitespace byte separates the header from the pixels
    pix = np.frombuffer(data[pos + 1: pos + 1 + w * h * 3], dtype=np.uint8)
    return pix.reshape(h, w, 3).astype(np.float64) / maxval


def export_filters(model, transform, layout, path_prefix, frames=None):
    """Write one PPM filter grid per requested frame; returns the paths."""
    vectors = filter_vectors(model, transform)
    frames = [0] if frames is None else list(frames)
    paths = []
    for t in frames:
        path = f"{path_prefix}.ppm" if layout.frames == 1 else f"{path_prefix}_frame{t}.ppm"
        write_ppm(path, tile_filters(vectors, layout, frame=t))
        paths.append(path)
    return paths
