"""Hidden-unit activation functions and their derivatives.

All functions are elementwise and accept scalars or numpy arrays.  The
thresholded kinds use strict inequalities, so both the value and the
derivative are zero exactly at the threshold.
"""

from dataclasses import dataclass

import numpy as np

# CLI / config names, in serialization tag order.
KIND_NAMES = ("trec", "tlin", "relu", "sigmoid", "zrelu")
ZERO_BIAS_KINDS = frozenset({"trec", "tlin", "zrelu"})
THRESHOLDED_KINDS = frozenset({"trec", "tlin"})


@dataclass(frozen=True)
class ActivationKind:
    """An activation variant plus its threshold (only used by trec/tlin)."""

    name: str
    theta: float = 0.0

    def __post_init__(self):
        if self.name not in KIND_NAMES:
            raise ValueError(f"unknown activation kind {self.name!r}; expected one of {KIND_NAMES}")
        if self.name in THRESHOLDED_KINDS and not self.theta > 0:
            raise ValueError(f"{self.name} needs a positive threshold, got {self.theta}")

    @property
    def zero_bias(self):
        """True when hidden and visible biases are fixed at zero."""
        return self.name in ZERO_BIAS_KINDS

    @property
    def tag(self):
        return KIND_NAMES.index(self.name)

    def __str__(self):
        if self.name in THRESHOLDED_KINDS:
            return f"{self.name}(theta={self.theta:g})"
        return self.name


def TRec(theta=1.0):
    return ActivationKind("trec", float(theta))


def TLin(theta=1.0):
    return ActivationKind("tlin", float(theta))


RELU = ActivationKind("relu")
SIGMOID = ActivationKind("sigmoid")
ZERO_BIAS_RELU = ActivationKind("zrelu")


def parse_kind(name, theta=1.0):
    """Build an ActivationKind from its CLI name."""
    if name in THRESHOLDED_KINDS:
        return ActivationKind(name, float(theta))
    return ActivationKind(name)


def _sigmoid(a):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def sigmoid(a):
    out = _sigmoid(np.asarray(a, dtype=np.float64))
    return out if out.ndim else float(out)


def _gate(kind, a):
    if kind.name == "trec":
        return a > kind.theta
    if kind.name == "tlin":
        return a * a > kind.theta * kind.theta
    return a > 0


def act_forward(kind, a):
    """Apply the activation ``kind`` to preactivation(s) ``a``."""
    a = np.asarray(a, dtype=np.float64)
    if kind.name == "sigmoid":
        out = _sigmoid(a)
        return out if out.ndim else float(out)
    out = np.where(_gate(kind, a), a, 0.0)
    return out if out.ndim else float(out)


def act_backward(kind, a):
    """Derivative of ``act_forward`` with respect to the preactivation.

    The selection gate of trec/tlin is treated as piecewise constant, so
    its own derivative contributes nothing.
    """
    a = np.asarray(a, dtype=np.float64)
    if kind.name == "sigmoid":
        s = _sigmoid(a)
        out = s * (1.0 - s)
    else:
        out = _gate(kind, a).astype(np.float64)
    return out if out.ndim else float(out)


def act_second(kind, a):
    """Second derivative; zero almost everywhere for the piecewise-linear kinds.

    Needed by the contraction penalty, which differentiates ``act_backward``.
    """
    a = np.asarray(a, dtype=np.float64)
    if kind.name == "sigmoid":
        s = _sigmoid(a)
        out = s * (1.0 - s) * (1.0 - 2.0 * s)
    else:
        out = np.zeros_like(a)
    return out if out.ndim else float(out)


def threshold_points(kind):
    """Preactivation values where the activation is non-differentiable."""
    if kind.name == "trec":
        return (kind.theta,)
    if kind.name == "tlin":
        return (-kind.theta, kind.theta)
    if kind.name in ("relu", "zrelu"):
        return (0.0,)
    return ()
