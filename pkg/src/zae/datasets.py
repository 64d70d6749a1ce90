"""CIFAR-10 ingestion, patch cropping and synthetic rotating-dot videos."""

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, DimensionError

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
CIFAR_PIXELS = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE
CIFAR_RECORD = 1 + CIFAR_PIXELS
CIFAR_CLASSES = 10

DEFAULT_DOTS = 16
DEFAULT_ANGLE_RANGE = (np.pi / 16, np.pi / 4)


@dataclass(frozen=True, eq=False)
class LabeledImageSet:
    """Images flattened channel-major (C, H, W) into rows, with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    height: int
    width: int
    channels: int

    def __post_init__(self):
        if self.images.ndim != 2 or self.images.shape[1] != self.channels * self.height * self.width:
            raise DimensionError(
                f"rows must have {self.channels}*{self.height}*{self.width} entries, got {self.images.shape}"
            )
        if len(self.labels) != len(self.images):
            raise DimensionError("labels and images differ in length")

    def __len__(self):
        return len(self.images)

    def head(self, n):
        """The first ``n`` samples (all of them when n is None)."""
        if n is None:
            return self
        return LabeledImageSet(self.images[:n], self.labels[:n], self.height, self.width, self.channels)

    def as_cube(self):
        return self.images.reshape(-1, self.channels, self.height, self.width)


@dataclass(frozen=True, eq=False)
class VideoSet:
    """Videos flattened frame-major (F, S, S) into rows.

    ``rotation_angle`` holds the per-frame rotation of every video.
    """

    videos: np.ndarray
    frames: int
    frame_size: int
    rotation_angle: np.ndarray

    def __post_init__(self):
        if self.videos.ndim != 2 or self.videos.shape[1] != self.frames * self.frame_size ** 2:
            raise DimensionError(f"rows must have {self.frames}*{self.frame_size}^2 entries")

    def __len__(self):
        return len(self.videos)

    def as_cube(self):
        return self.videos.reshape(-1, self.frames, self.frame_size, self.frame_size)


def parse_cifar10_bytes(raw, where="<bytes>"):
    """Parse CIFAR-10 binary records: one label byte then 3072 pixel bytes."""
    buf = np.frombuffer(raw, dtype=np.uint8)
    n_full, rest = divmod(len(buf), CIFAR_RECORD)
    if rest:
        raise DataFormatError(f"{where}: truncated record at offset {n_full * CIFAR_RECORD}")
    records = buf.reshape(n_full, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR_CLASSES)
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(f"{where}: label {labels[i]} out of range at offset {i * CIFAR_RECORD}")
    images = records[:, 1:].astype(np.float64) / 255.0
    return images, labels


def load_cifar10(paths):
    """Load and concatenate CIFAR-10 binary batch files."""
    if isinstance(paths, (str, bytes)) or hasattr(paths, "__fspath__"):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        with open(path, "rb") as fh:
            raw = fh.read()
        x, y = parse_cifar10_bytes(raw, where=str(path))
        images.append(x)
        labels.append(y)
    if not images:
        raise DataFormatError("no CIFAR-10 files given")
    return LabeledImageSet(np.concatenate(images), np.concatenate(labels), CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS)


def crop_center_patches(dataset, P):
    """Cut the centered P x P window out of every image."""
    if P < 1 or P > dataset.height or P > dataset.width:
        raise DimensionError(f"patch size {P} does not fit {dataset.height}x{dataset.width} images")
    top = (dataset.height - P) // 2
    left = (dataset.width - P) // 2
    cube = dataset.as_cube()[:, :, top:top + P, left:left + P]
    return LabeledImageSet(
        np.ascontiguousarray(cube.reshape(len(dataset), -1)), dataset.labels.copy(), P, P, dataset.channels
    )


def sample_random_patches(dataset, P, count, seed, return_origins=False):
    """Draw ``count`` P x P windows at uniformly random images and positions.

    Works for both image sets (rows of C*P*P) and video sets (rows of
    F*P*P, the same window in every frame).
    """
    if isinstance(dataset, VideoSet):
        cube = dataset.as_cube()
        height = width = dataset.frame_size
    else:
        cube = dataset.as_cube()
        height, width = dataset.height, dataset.width
    if P < 1 or P > height or P > width:
        raise DimensionError(f"patch size {P} does not fit {height}x{width} frames")
    depth = cube.shape[1]
    rng = np.random.default_rng(seed)
    which = rng.integers(0, len(cube), size=count)
    tops = rng.integers(0, height - P + 1, size=count)
    lefts = rng.integers(0, width - P + 1, size=count)
    out = np.empty((count, depth * P * P))
    for i in range(count):
        out[i] = cube[which[i], :, tops[i]:tops[i] + P, lefts[i]:lefts[i] + P].ravel()
    if return_origins:
        return out, np.stack([tops, lefts], axis=1)
    return out


# -- rotating random dots ---------------------------------------------------


def render_dots(positions, size):
    """Bilinearly splat unit-intensity dots at continuous (row, col) positions.

    ``positions`` has shape (..., n_dots, 2); the result has shape
    (..., size, size) and is clipped to [0, 1].
    """
    positions = np.asarray(positions, dtype=np.float64)
    lead = positions.shape[:-2]
    pts = positions.reshape(-1, positions.shape[-2], 2)
    img = np.zeros((pts.shape[0], size, size))
    r0 = np.floor(pts[..., 0]).astype(np.int64)
    c0 = np.floor(pts[..., 1]).astype(np.int64)
    fr = pts[..., 0] - r0
    fc = pts[..., 1] - c0
    owner = np.broadcast_to(np.arange(pts.shape[0])[:, None], r0.shape)
    for dr, dc, w in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
        np.add.at(img, (owner[ok], rr[ok], cc[ok]), w[ok])
    np.clip(img, 0.0, 1.0, out=img)
    return img.reshape(lead + (size, size))


def _bilinear_sample(images, rows, cols):
    """Sample images[n] at fractional (rows[n], cols[n]); zero outside."""
    n, size = images.shape[0], images.shape[-1]
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    idx = np.arange(n).reshape((n,) + (1,) * (rows.ndim - 1))
    idx = np.broadcast_to(idx, rows.shape)
    out = np.zeros(rows.shape)
    for dr, dc, w in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
        vals = np.zeros(rows.shape)
        vals[ok] = images[idx[ok], rr[ok], cc[ok]]
        out += w * vals
    return out


def rotate_images(images, angles):
    """Rotate square images counter-clockwise about their centers.

    ``images`` is (N, S, S) and ``angles`` broadcasts to (N,).  Uses
    inverse mapping with bilinear sampling and zero padding.
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    if single:
        images = images[None]
    n, size = images.shape[0], images.shape[-1]
    angles = np.broadcast_to(np.asarray(angles, dtype=np.float64), (n,))
    center = (size - 1) / 2.0
    grid = np.arange(size, dtype=np.float64)
    # x to the right, y upwards
    x = (grid[None, :] - center)[None].repeat(size, axis=1)
    y = (center - grid[:, None])[None].repeat(size, axis=2)
    cos = np.cos(angles)[:, None, None]
    sin = np.sin(angles)[:, None, None]
    xs = cos * x + sin * y
    ys = -sin * x + cos * y
    out = _bilinear_sample(images, center - ys, center + xs)
    return out[0] if single else out


def rotate_points(positions, angles, size):
    """Rotate (row, col) positions counter-clockwise about the frame center.

    ``angles`` broadcasts against the leading axes of ``positions``.
    """
    positions = np.asarray(positions, dtype=np.float64)
    center = (size - 1) / 2.0
    x = positions[..., 1] - center
    y = center - positions[..., 0]
    angles = np.asarray(angles, dtype=np.float64)[..., None]
    cos, sin = np.cos(angles), np.sin(angles)
    xr = cos * x - sin * y
    yr = sin * x + cos * y
    return np.stack([center - yr, center + xr], axis=-1)


def gen_rotating_dots(n_videos, frames=10, size=13, dots_per_frame=DEFAULT_DOTS,
                      angle_per_frame=None, seed=0):
    """Generate videos whose frames rotate a random dot image step by step.

    With ``angle_per_frame=None`` each video gets its own angle drawn
    uniformly from [pi/16, pi/4].  Frame t splats the dot positions of
    frame 1 rotated by t steps, which keeps the mass of interior dots
    exact; dots leaving the frame are dropped.
    """
    for name, value in (("n_videos", n_videos), ("frames", frames), ("size", size),
                        ("dots_per_frame", dots_per_frame)):
        if value < 1:
            raise ValueError(f"{name} must be positive, got {value}")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(0.0, size - 1.0, size=(n_videos, dots_per_frame, 2))
    if angle_per_frame is None:
        angles = rng.uniform(*DEFAULT_ANGLE_RANGE, size=n_videos)
    else:
        angles = np.full(n_videos, float(angle_per_frame))
    cube = np.empty((n_videos, frames, size, size))
    for t in range(frames):
        cube[:, t] = render_dots(rotate_points(positions, t * angles, size), size)
    return VideoSet(cube.reshape(n_videos, -1), frames, size, angles)
