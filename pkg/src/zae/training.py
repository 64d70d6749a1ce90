"""Minibatch SGD with classical momentum and a two-phase learning rate."""

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import DimensionError, NumericalError
from .models import NO_REG, loss_and_grads
from .seeding import substream


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 100
    lr_warmup: float = 1e-4
    lr_main: float = 1e-3
    warmup_epochs: int = 3
    momentum: float = 0.9
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.warmup_epochs < 0:
            raise ValueError("epochs, batch_size and warmup_epochs must be non-negative (batch_size positive)")
        if not (self.lr_warmup > 0 and self.lr_main > 0):
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")

    def learning_rate(self, epoch):
        return self.lr_warmup if epoch < self.warmup_epochs else self.lr_main

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_mapping(cls, values):
        """Build from string-valued ``key=value`` pairs, ignoring unknown keys."""
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            if f.type in ("bool", bool):
                kwargs[f.name] = str(raw).lower() in ("1", "true", "yes", "on")
            elif f.type in ("int", int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = float(raw)
        return cls(**kwargs)


class MetricsLog:
    """Per-epoch metrics sink; pass it as the ``callback`` of ``sgd_train``."""

    def __init__(self):
        self.rows = []

    def __call__(self, epoch, loss):
        self.rows.append((int(epoch), float(loss)))

    def __len__(self):
        return len(self.rows)


def train_curve(log):
    """Table of ``(epoch, loss)`` rows from a MetricsLog (or a list of rows)."""
    rows = log.rows if isinstance(log, MetricsLog) else list(log)
    return [(int(e), float(l)) for e, l in rows]


def write_curve_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in train_curve(rows):
            writer.writerow([epoch, repr(loss)])


def sgd_train(model, X, cfg, reg=NO_REG, callback=None):
    """Train ``model`` on the rows of ``X``; returns the trained model.

    Update rule per minibatch: ``v <- momentum * v - lr * grad``,
    ``param <- param + v``.  Epochs are numbered from 1 in the callback;
    the last partial batch is kept.  Zero-bias models never touch b or c.
    """
    X = np.asarray(X, dtype=np.float64)
    N = X.shape[0]
    if N == 0:
        raise DimensionError("cannot train on an empty matrix")
    if cfg.batch_size > N:
        raise DimensionError(f"batch_size {cfg.batch_size} exceeds the {N} training rows")
    shuffle_rng = substream(cfg.seed, "shuffle")
    noise_rng = substream(cfg.seed, "corruption")

    params = {"W": model.W.copy(), "b": model.b.copy(), "c": model.c.copy()}
    trainable = ("W",) if model.kind.zero_bias else ("W", "b", "c")
    velocity = {k: np.zeros_like(params[k]) for k in trainable}

    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate(epoch)
        order = shuffle_rng.permutation(N) if cfg.shuffle else np.arange(N)
        total = 0.0
        current = model.with_params(**params)
        for bi, start in enumerate(range(0, N, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            noise_seed = int(noise_rng.integers(2**63 - 1))
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = loss_and_grads(current, X[idx], reg, seed=noise_seed)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(grads[k])) for k in trainable):
                raise NumericalError(f"non-finite loss at epoch {epoch + 1}, batch {bi}")
            total += loss * len(idx)
            for k in trainable:
                velocity[k] *= cfg.momentum
                velocity[k] -= lr * grads[k]
                params[k] += velocity[k]
            current = model.with_params(**params)
        if callback is not None:
            callback(epoch + 1, total / N)
    return model.with_params(**params)
