"""Little-endian binary formats for matrices, PCA transforms and models.

ZMAT  magic, u32 version, u64 rows, u64 cols, rows*cols f64 (row-major)
ZPCA  magic, u32 version, u32 D, u32 R, u8 whiten, f64 epsilon,
      D f64 mean, R f64 eigenvalues, D*R f64 basis (row-major)
ZAE1  magic, u32 version, u32 D, u32 K, u8 kind tag, f64 theta,
      D*K f64 W (row-major), K f64 b, D f64 c
"""

import struct

import numpy as np

from .activations import KIND_NAMES, ActivationKind
from .datasets import VideoSet
from .errors import DataFormatError
from .models import AutoencoderModel, KMeansModel
from .preprocessing import WhiteningTransform

VERSION = 1
KMEANS_TAG = len(KIND_NAMES)  # models with centroids instead of an activation

_F64 = np.dtype("<f8")


def _f64(a):
    return np.ascontiguousarray(a, dtype=_F64).tobytes()


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DataFormatError(f"{self.path}: unexpected end of file at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, n):
        return np.frombuffer(self.take(8 * n), dtype=_F64).astype(np.float64)

    def header(self, magic):
        if self.take(4) != magic:
            raise DataFormatError(f"{self.path}: bad magic, expected {magic!r}")
        (version,) = self.unpack("<I")
        if version != VERSION:
            raise DataFormatError(f"{self.path}: unsupported version {version}")

    def finish(self):
        if self.pos != len(self.data):
            raise DataFormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _read(path):
    with open(path, "rb") as fh:
        return _Reader(fh.read(), path)


# -- ZMAT -------------------------------------------------------------------


def zmat_bytes(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return b"ZMAT" + struct.pack("<IQQ", VERSION, X.shape[0], X.shape[1]) + _f64(X)


def save_matrix(path, X):
    with open(path, "wb") as fh:
        fh.write(zmat_bytes(X))


def load_matrix(path):
    r = _read(path)
    r.header(b"ZMAT")
    rows, cols = r.unpack("<QQ")
    X = r.floats(rows * cols).reshape(rows, cols)
    r.finish()
    return X


def save_videos(path, videos):
    """ZMAT payload plus a ``<path>.hdr`` text sidecar; angles go to ``<path>.angles``."""
    save_matrix(path, videos.videos)
    angles = np.asarray(videos.rotation_angle, dtype=np.float64)
    angle = repr(float(angles[0])) if angles.size and np.all(angles == angles[0]) else "per-video"
    with open(f"{path}.hdr", "w") as fh:
        fh.write(f"frames={videos.frames}\nsize={videos.frame_size}\nangle={angle}\n")
    save_matrix(f"{path}.angles", angles.reshape(-1, 1))


def load_videos(path):
    header = {}
    with open(f"{path}.hdr") as fh:
        for line in fh:
            if "=" in line:
                k, v = line.strip().split("=", 1)
                header[k] = v
    try:
        frames, size = int(header["frames"]), int(header["size"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}.hdr: malformed video header") from exc
    X = load_matrix(path)
    angles = load_matrix(f"{path}.angles")[:, 0]
    return VideoSet(X, frames, size, angles)


# -- ZPCA -------------------------------------------------------------------


def zpca_bytes(T):
    D, R = T.basis.shape
    return (
        b"ZPCA"
        + struct.pack("<IIIBd", VERSION, D, R, int(T.whiten), T.epsilon)
        + _f64(T.mean)
        + _f64(T.eigenvalues)
        + _f64(T.basis)
    )


def save_transform(path, T):
    with open(path, "wb") as fh:
        fh.write(zpca_bytes(T))


def load_transform(path):
    r = _read(path)
    r.header(b"ZPCA")
    D, R, whiten, eps = r.unpack("<IIBd")
    mean = r.floats(D)
    evals = r.floats(R)
    basis = r.floats(D * R).reshape(D, R)
    r.finish()
    return WhiteningTransform(mean, basis, evals, bool(whiten), eps)


# -- ZAE1 -------------------------------------------------------------------


def zae_bytes(model):
    if isinstance(model, KMeansModel):
        W = model.centroids
        D, K = W.shape
        tag, theta, b, c = KMEANS_TAG, 0.0, np.zeros(K), np.zeros(D)
    else:
        W, b, c = model.W, model.b, model.c
        D, K = W.shape
        tag, theta = model.kind.tag, model.kind.theta
    return b"ZAE1" + struct.pack("<IIIBd", VERSION, D, K, tag, theta) + _f64(W) + _f64(b) + _f64(c)


def save_model(path, model):
    with open(path, "wb") as fh:
        fh.write(zae_bytes(model))


def load_model(path):
    r = _read(path)
    r.header(b"ZAE1")
    D, K, tag, theta = r.unpack("<IIBd")
    W = r.floats(D * K).reshape(D, K)
    b = r.floats(K)
    c = r.floats(D)
    r.finish()
    if tag == KMEANS_TAG:
        return KMeansModel(W)
    if tag >= len(KIND_NAMES):
        raise DataFormatError(f"{path}: unknown activation tag {tag}")
    return AutoencoderModel(W, b, c, ActivationKind(KIND_NAMES[tag], theta))
