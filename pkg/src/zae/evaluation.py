"""Feature extraction, softmax classification and the experiment drivers."""

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .activations import RELU, SIGMOID, ZERO_BIAS_RELU, TLin, TRec, act_forward
from .datasets import crop_center_patches
from .errors import DimensionError, NumericalError
from .models import (
    NO_REG,
    Contractive,
    Denoising,
    KMeansModel,
    init_autoencoder,
    kmeans_train,
)
from .preprocessing import contrast_normalize, pca_apply, pca_fit
from .seeding import subseed
from .training import TrainConfig, sgd_train

DEFAULT_DECAY_GRID = (0.0, 1e-4, 1e-3, 1e-2, 1e-1)
MODEL_NAMES = ("trec", "tlin", "dae", "cae", "kmeans", "relu", "sigmoid", "zrelu")


class InferenceScheme(str, Enum):
    RELU_WITH_BIAS = "relu-bias"
    RELU_NO_BIAS = "relu-nobias"
    NATURAL = "natural"


def extract_features(model, X, scheme=InferenceScheme.RELU_NO_BIAS):
    """Hidden representation of the rows of ``X`` under an inference scheme.

    K-means models always use ``max(0, C^T x)``, the zero-bias stand-in
    for the triangle activation.
    """
    scheme = InferenceScheme(scheme)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_visible:
        raise DimensionError(f"expected {model.n_visible} columns, got {X.shape[1]}")
    if isinstance(model, KMeansModel):
        return np.maximum(X @ model.centroids, 0.0)
    lin = X @ model.W
    if scheme is InferenceScheme.RELU_NO_BIAS:
        return np.maximum(lin, 0.0)
    if scheme is InferenceScheme.RELU_WITH_BIAS:
        return np.maximum(lin + model.b, 0.0)
    return act_forward(model.kind, lin + model.b)


# -- multinomial logistic regression ----------------------------------------


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    weights: np.ndarray  # K x C
    biases: np.ndarray  # C
    weight_decay: float = 0.0

    @property
    def n_classes(self):
        return self.biases.shape[0]


def softmax(Z):
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def predict_proba(clf, F):
    return softmax(np.atleast_2d(F) @ clf.weights + clf.biases)


def predict(clf, F):
    return predict_proba(clf, F).argmax(axis=1)


def accuracy(clf, F, labels):
    return float(np.mean(predict(clf, F) == np.asarray(labels)))


def logreg_loss_and_grads(weights, biases, F, labels, weight_decay):
    """Mean cross-entropy plus ``weight_decay * |W|^2`` and its gradients."""
    N = F.shape[0]
    P = softmax(F @ weights + biases)
    loss = -float(np.mean(np.log(np.maximum(P[np.arange(N), labels], 1e-300))))
    loss += weight_decay * float(np.sum(weights * weights))
    G = P
    G[np.arange(N), labels] -= 1.0
    G /= N
    return loss, F.T @ G + 2.0 * weight_decay * weights, G.sum(axis=0)


def _top_singular_sq(F, iters=100):
    # power iteration on F^T F with a fixed start vector
    v = np.ones(F.shape[1]) / np.sqrt(F.shape[1])
    s = 0.0
    for _ in range(iters):
        u = F.T @ (F @ v)
        s = np.linalg.norm(u)
        if s == 0:
            return 0.0
        v = u / s
    return float(s)


def logreg_train(F, labels, weight_decay=0.0, iters=500, lr=None, seed=0, n_classes=None, momentum=0.9):
    """Full-batch gradient descent with momentum on the softmax objective.

    Without ``lr``, weights and biases get separate step sizes equal to the
    inverse of their curvature bounds, which keeps large weight decays
    stable; an explicit ``lr`` is capped at those bounds.
    """
    F = np.asarray(F, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if not np.all(np.isfinite(F)):
        raise NumericalError("non-finite features")
    N, K = F.shape
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"labels must lie in [0, {C})")
    step_w = 1.0 / (0.5 * _top_singular_sq(F) / N * 1.05 + 2.0 * weight_decay + 1e-12)
    step_b = 2.0
    if lr is not None:
        step_w, step_b = min(lr, step_w), min(lr, step_b)
    rng = np.random.default_rng(seed)
    Wc = rng.normal(0.0, 1e-3, size=(K, C))
    bc = np.zeros(C)
    vW = np.zeros_like(Wc)
    vb = np.zeros_like(bc)
    for it in range(iters):
        loss, gW, gb = logreg_loss_and_grads(Wc, bc, F, labels, weight_decay)
        if not np.isfinite(loss):
            raise NumericalError(f"classifier loss diverged at iteration {it}")
        vW = momentum * vW - step_w * gW
        vb = momentum * vb - step_b * gb
        Wc = Wc + vW
        bc = bc + vb
    return ClassifierModel(Wc, bc, float(weight_decay))


def cross_validate_decay(F, labels, grid=DEFAULT_DECAY_GRID, holdout_size=10000, seed=0, iters=500,
                         n_classes=None):
    """Pick the weight decay with the best accuracy on a seeded holdout split.

    Ties go to the smaller decay.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("empty weight-decay grid")
    if len(grid) == 1:
        return grid[0]
    F = np.asarray(F, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    N = len(labels)
    if not 0 < holdout_size < N:
        raise ValueError(f"holdout_size must lie in (0, {N}), got {holdout_size}")
    C = int(labels.max()) + 1 if n_classes is None else n_classes
    perm = np.random.default_rng(seed).permutation(N)
    hold, fit = perm[:holdout_size], perm[holdout_size:]
    best, best_acc = grid[0], -1.0
    for decay in grid:
        clf = logreg_train(F[fit], labels[fit], decay, iters=iters, seed=seed, n_classes=C)
        acc = accuracy(clf, F[hold], labels[hold])
        if acc > best_acc:
            best, best_acc = decay, acc
    return best


# -- experiment pipeline ------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Which feature learner to train: a model name plus its hyperparameters."""

    name: str
    theta: float = 1.0
    p: float = 0.5
    lam: float = 1.0
    kmeans_iters: int = 10

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.name!r}; expected one of {MODEL_NAMES}")

    def kind(self):
        return {
            "trec": TRec(self.theta),
            "tlin": TLin(self.theta),
            "dae": RELU,
            "relu": RELU,
            "cae": SIGMOID,
            "sigmoid": SIGMOID,
            "zrelu": ZERO_BIAS_RELU,
        }[self.name]

    def regularizer(self):
        if self.name == "dae":
            return Denoising(self.p)
        if self.name == "cae":
            return Contractive(self.lam)
        return NO_REG


@dataclass(frozen=True)
class PipelineConfig:
    variance: float = 0.99
    whiten: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)
    decay_grid: tuple = DEFAULT_DECAY_GRID
    holdout_size: int = 10000
    classifier_iters: int = 500
    seed: int = 0


def preprocess(train_X, test_X, cfg):
    """Contrast-normalize both splits and project them with PCA fitted on train."""
    tr = contrast_normalize(train_X)
    te = contrast_normalize(test_X)
    T = pca_fit(tr, cfg.variance, cfg.whiten)
    return pca_apply(T, tr), pca_apply(T, te), T


def fit_model(spec, n_hidden, X, cfg, callback=None):
    """Train the feature learner described by ``spec`` on rows of X."""
    if spec.name == "kmeans":
        return kmeans_train(X, n_hidden, spec.kmeans_iters, seed=subseed(cfg.seed, "init"))
    model = init_autoencoder(X.shape[1], n_hidden, spec.kind(), seed=subseed(cfg.seed, "init"))
    tcfg = cfg.train
    if tcfg.seed != cfg.seed:
        tcfg = TrainConfig(**{**tcfg.as_dict(), "seed": cfg.seed})
    batch = min(tcfg.batch_size, X.shape[0])
    if batch != tcfg.batch_size:
        tcfg = TrainConfig(**{**tcfg.as_dict(), "batch_size": batch})
    return sgd_train(model, X, tcfg, spec.regularizer(), callback)


class Standardizer:
    """Per-feature affine rescaling fitted on training features."""

    def __init__(self, F):
        self.mean = F.mean(axis=0)
        self.std = np.maximum(F.std(axis=0), 1e-8)

    def __call__(self, F):
        return (F - self.mean) / self.std


def classify(train_F, train_y, test_F, test_y, cfg, n_classes=None):
    """Standardize features, cross-validate the decay, fit and score on test.

    Returns ``(test_accuracy, chosen_decay)``.
    """
    scale = Standardizer(train_F)
    Ftr, Fte = scale(train_F), scale(test_F)
    C = int(max(train_y.max(), test_y.max())) + 1 if n_classes is None else n_classes
    holdout = min(cfg.holdout_size, len(train_y) // 5)
    decay = cross_validate_decay(Ftr, train_y, cfg.decay_grid, holdout, subseed(cfg.seed, "cv-split"),
                                 cfg.classifier_iters, n_classes=C)
    clf = logreg_train(Ftr, train_y, decay, cfg.classifier_iters, seed=subseed(cfg.seed, "classifier"),
                       n_classes=C)
    return accuracy(clf, Fte, test_y), decay


def evaluate_model(model, Xtr, ytr, Xte, yte, scheme, cfg):
    Ftr = extract_features(model, Xtr, scheme)
    Fte = extract_features(model, Xte, scheme)
    return classify(Ftr, ytr, Fte, yte, cfg)[0]


def run_raw_baseline(train, test, cfg):
    """Accuracy of the classifier on the preprocessed inputs themselves."""
    Xtr, Xte, _ = preprocess(train.images, test.images, cfg)
    return classify(Xtr, train.labels, Xte, test.labels, cfg)[0]


def _sweep_k_entry(args):
    Xtr, ytr, Xte, yte, spec, k, scheme, cfg = args
    model = fit_model(spec, k, Xtr, cfg)
    return k, evaluate_model(model, Xtr, ytr, Xte, yte, scheme, cfg)


def _map(fn, jobs, items):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def run_feature_sweep(train, test, spec, counts, scheme=InferenceScheme.RELU_NO_BIAS, cfg=None, jobs=1):
    """Test accuracy for each hidden-unit count; rows of ``(k, accuracy)``."""
    cfg = cfg or PipelineConfig()
    Xtr, Xte, _ = preprocess(train.images, test.images, cfg)
    items = [(Xtr, train.labels, Xte, test.labels, spec, int(k), scheme, cfg) for k in counts]
    return _map(_sweep_k_entry, jobs, items)


def _sweep_p_entry(args):
    train, test, spec, P, K, scheme, cfg = args
    tr, te = crop_center_patches(train, P), crop_center_patches(test, P)
    Xtr, Xte, _ = preprocess(tr.images, te.images, cfg)
    model = fit_model(spec, K, Xtr, cfg)
    return P, spec.name, evaluate_model(model, Xtr, tr.labels, Xte, te.labels, scheme, cfg)


def run_patchsize_sweep(train, test, specs, patch_sizes, n_hidden, scheme=InferenceScheme.RELU_NO_BIAS,
                        cfg=None, jobs=1):
    """Accuracy per (patch size, model) on center crops; rows of ``(p, model, accuracy)``."""
    cfg = cfg or PipelineConfig()
    items = [(train, test, spec, int(P), n_hidden, scheme, cfg) for P in patch_sizes for spec in specs]
    return _map(_sweep_p_entry, jobs, items)


def run_inference_comparison(model, Xtr, ytr, Xte, yte, cfg=None):
    """Same trained model, same classifier protocol, all three schemes."""
    cfg = cfg or PipelineConfig()
    return [(s.value, evaluate_model(model, Xtr, ytr, Xte, yte, s, cfg)) for s in InferenceScheme]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
