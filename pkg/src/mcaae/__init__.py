"""Recursive dropout autoencoders for uncertainty and OOD estimation.

A dropout-trained denoising autoencoder, applied recursively under a
frozen mask, behaves as a dynamical system whose training samples become
approximate attractors. Repeating the recursion under freshly sampled
masks and classifying the final latent codes yields a predictive
distribution whose normalized entropy scores uncertainty and
out-of-distribution-ness.
"""

from ._kernels import BACKEND as kernel_backend
from .autoencoder import (
    AugmentationConfig,
    Autoencoder,
    TrainConfig,
    augment,
    build_autoencoder,
    decode,
    encode,
    load_autoencoder,
    reconstruct,
    sample_autoencoder_mask,
    save_autoencoder,
    train,
)
from .dynamics import (
    FixedPointReport,
    Orbit,
    SpectralReport,
    basin_probe,
    fixed_point_residual,
    iterate,
    jacobian_spectral_radius,
    power_iteration_radius,
)
from .mca import (
    Decision,
    LatentClassifier,
    McaBatchResult,
    PredictiveDistribution,
    build_latent_classifier,
    decide,
    load_classifier,
    mca_predict,
    mca_predict_dataset,
    normalized_entropy,
    save_classifier,
    train_classifier,
)
from .metrics import (
    EntropyHistogramSet,
    SeparationSummary,
    aupr,
    auroc,
    fpr_at_95_tpr,
    td_od,
    wasserstein1,
)
from .nncore import (
    AdamState,
    DenseLayer,
    DropoutMask,
    Network,
    adam_step,
    backward,
    forward,
    forward_value,
    init_network,
    sample_dropout_mask,
    sample_dropout_masks,
)
from .ssim import ssim, ssim_with_grad

__version__ = "0.1.0"
