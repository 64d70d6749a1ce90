"""Zero-bias autoencoders (TRec/TLin), regularized baselines and analysis tools."""

from .activations import (
    RELU,
    SIGMOID,
    ZERO_BIAS_RELU,
    ActivationKind,
    TLin,
    TRec,
    act_backward,
    act_forward,
)
from .models import (
    AutoencoderModel,
    Contractive,
    Denoising,
    KMeansModel,
    NO_REG,
    Regularizer,
    encode,
    init_autoencoder,
    kmeans_train,
    loss_and_grads,
    reconstruct,
)
from .preprocessing import WhiteningTransform, contrast_normalize, pca_apply, pca_fit, pca_invert
from .training import MetricsLog, TrainConfig, sgd_train, train_curve

__version__ = "0.1.0"
