"""Denoising autoencoder: model assembly, augmentation, SSIM-loss training.

The reconstruction loss is 1 - mean window SSIM between the reconstruction
of an *augmented* input and the *clean* input. Training uses a fresh
dropout mask per sample per step; the latent layer and the decoder carry
no dropout, so a mask for the full encode/decode map is exactly a mask for
the encoder's hidden layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DimensionError, TrainingError, ValidationError
from .nncore import (
    AdamState,
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
from .ssim import ssim_with_grad


@dataclass
class Autoencoder:
    encoder: Network
    decoder: Network
    latent_dim: int

    def __post_init__(self):
        if self.encoder.output_dim != self.latent_dim:
            raise DimensionError(
                f"encoder output width {self.encoder.output_dim} != latent_dim {self.latent_dim}"
            )
        if self.decoder.input_dim != self.latent_dim:
            raise DimensionError(
                f"decoder input width {self.decoder.input_dim} != latent_dim {self.latent_dim}"
            )
        if self.decoder.output_dim != self.encoder.input_dim:
            raise DimensionError("decoder output width must equal encoder input width")

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def combined(self) -> Network:
        """Encoder and decoder as one network sharing the same layer objects."""
        return Network(
            self.encoder.layers + self.decoder.layers,
            self.encoder.dropout_eligible + self.decoder.dropout_eligible,
        )

    def split_mask(self, mask: DropoutMask | None):
        """Split a full-map mask into its encoder and decoder parts."""
        if mask is None:
            return None, None
        n_enc = sum(self.encoder.dropout_eligible)
        enc = DropoutMask(mask.keep_prob, mask.per_layer_keep[:n_enc])
        dec = DropoutMask(mask.keep_prob, mask.per_layer_keep[n_enc:])
        return enc, dec


def build_autoencoder(
    input_dim: int,
    rng: np.random.Generator,
    hidden_widths: tuple[int, ...] = (256, 64),
    latent_dim: int = 10,
) -> Autoencoder:
    """Mirrored dense autoencoder: relu hidden stacks, linear latent,
    sigmoid pixels. Dropout eligibility: encoder hidden layers only."""
    enc_widths = [input_dim, *hidden_widths, latent_dim]
    enc_acts = ["relu"] * len(hidden_widths) + ["identity"]
    enc_eligible = [True] * len(hidden_widths) + [False]
    dec_widths = [latent_dim, *reversed(hidden_widths), input_dim]
    dec_acts = ["relu"] * len(hidden_widths) + ["sigmoid"]
    encoder = init_network(enc_widths, enc_acts, rng, enc_eligible)
    decoder = init_network(dec_widths, dec_acts, rng)
    return Autoencoder(encoder, decoder, latent_dim)


def sample_autoencoder_mask(
    ae: Autoencoder, keep_prob: float, rng: np.random.Generator
) -> DropoutMask:
    return sample_dropout_mask(ae.combined(), keep_prob, rng)


ENCODER_FILE = "autoencoder.enc.mcae"
DECODER_FILE = "autoencoder.dec.mcae"


def save_autoencoder(directory, ae: Autoencoder) -> None:
    """Encoder and decoder as two single-network checkpoint files."""
    from pathlib import Path

    from .checkpoint import save_network

    directory = Path(directory)
    save_network(directory / ENCODER_FILE, ae.encoder)
    save_network(directory / DECODER_FILE, ae.decoder)


def load_autoencoder(directory) -> Autoencoder:
    """Load the checkpoint pair and reapply the dropout-eligibility policy
    (encoder hidden layers only; never the latent layer or the decoder)."""
    from pathlib import Path

    from .checkpoint import load_network

    directory = Path(directory)
    encoder = load_network(directory / ENCODER_FILE)
    decoder = load_network(directory / DECODER_FILE)
    encoder.dropout_eligible = [True] * (len(encoder.layers) - 1) + [False]
    return Autoencoder(encoder, decoder, encoder.output_dim)


def encode(ae: Autoencoder, x: np.ndarray, mask: DropoutMask | None = None) -> np.ndarray:
    """Latent code for flattened input(s) x: [d] or [batch, d]."""
    enc_mask, _ = ae.split_mask(mask)
    return forward_value(ae.encoder, x, enc_mask)


def decode(ae: Autoencoder, z: np.ndarray, mask: DropoutMask | None = None) -> np.ndarray:
    """Reconstruction from latent code(s) z: [latent] or [batch, latent]."""
    _, dec_mask = ae.split_mask(mask)
    return forward_value(ae.decoder, z, dec_mask)


def reconstruct(ae: Autoencoder, x: np.ndarray, mask: DropoutMask | None = None) -> np.ndarray:
    """decode(encode(x)) under one fixed mask."""
    return forward_value(ae.combined(), x, mask)


@dataclass
class AugmentationConfig:
    """Corruption ranges for denoising training; each parameter is drawn
    uniformly from its range per sample. Outputs are clamped to [0, 1]."""

    blur_sigma_range: tuple[float, float] = (0.0, 1.5)
    noise_std_range: tuple[float, float] = (0.0, 0.1)
    brightness_delta_range: tuple[float, float] = (-0.1, 0.1)
    contrast_factor_range: tuple[float, float] = (0.9, 1.1)

    def __post_init__(self):
        for name in (
            "blur_sigma_range",
            "noise_std_range",
            "brightness_delta_range",
            "contrast_factor_range",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"{name} is not ordered: ({lo}, {hi})")
        if self.blur_sigma_range[0] < 0 or self.noise_std_range[0] < 0:
            raise ValidationError("blur sigma and noise std must be non-negative")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls((0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (1.0, 1.0))


def _gaussian_kernels(sigmas: np.ndarray, radius: int) -> np.ndarray:
    """Normalized per-sample 1-D Gaussian taps on [-radius, radius];
    sigma ~ 0 degenerates to an exact delta kernel."""
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernels = np.zeros((len(sigmas), 2 * radius + 1))
    tiny = sigmas < 1e-12
    kernels[tiny, radius] = 1.0
    if not tiny.all():
        s = sigmas[~tiny][:, None]
        k = np.exp(-0.5 * (offsets[None, :] / s) ** 2)
        kernels[~tiny] = k / k.sum(axis=1, keepdims=True)
    return kernels


def _blur_batch(images: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Separable per-sample Gaussian blur with edge replication, batched."""
    radius = max(1, int(np.ceil(2.0 * sigmas.max())))
    kernels = _gaussian_kernels(sigmas, radius)
    return _kernels.blur_separable(np.ascontiguousarray(images), kernels)


def augment_batch(
    images: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator
) -> np.ndarray:
    """Blur, additive noise, brightness shift, contrast scale, clamp.

    Parameters are drawn per sample in that order. Operations whose range
    is degenerate at the identity are skipped entirely so the identity
    configuration reproduces the input bit for bit.
    """
    images = np.ascontiguousarray(images, dtype=np.float64)
    n = images.shape[0]
    out = images

    lo, hi = cfg.blur_sigma_range
    if hi > 0.0:
        sigmas = rng.uniform(lo, hi, size=n)
        out = _blur_batch(out, sigmas)
    lo, hi = cfg.noise_std_range
    if hi > 0.0:
        stds = rng.uniform(lo, hi, size=n)
        out = out + stds[:, None, None] * rng.standard_normal(out.shape)
    lo, hi = cfg.brightness_delta_range
    if lo != 0.0 or hi != 0.0:
        deltas = rng.uniform(lo, hi, size=n)
        out = out + deltas[:, None, None]
    lo, hi = cfg.contrast_factor_range
    if lo != 1.0 or hi != 1.0:
        factors = rng.uniform(lo, hi, size=n)
        out = (out - 0.5) * factors[:, None, None] + 0.5
    if out is images:
        return images.copy()
    return np.clip(out, 0.0, 1.0)


def augment(image: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Single-image augmentation; see augment_batch."""
    return augment_batch(image[None], cfg, rng)[0]


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-4
    keep_prob: float = 0.67
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValidationError(f"keep_prob must be in (0, 1], got {self.keep_prob}")


def train(
    ae: Autoencoder,
    images: np.ndarray,
    cfg: TrainConfig,
    aug_cfg: AugmentationConfig,
) -> list[float]:
    """Train in place as a denoiser; returns the per-epoch loss history.

    Loss per batch is 1 - mean SSIM(reconstruct(augment(x)), x). A fresh
    dropout mask is sampled per sample per step. Deterministic given
    (ae initial state, images, cfg, aug_cfg).
    """
    if images.ndim != 3 or len(images) == 0:
        raise ValidationError("expected a non-empty [n, h, w] image array")
    n, h, w = images.shape
    if h * w != ae.input_dim:
        raise DimensionError(f"image size {h}x{w} does not match model input {ae.input_dim}")
    images = np.ascontiguousarray(images, dtype=np.float64)

    rng = np.random.default_rng(cfg.seed)
    net = ae.combined()
    params = net.parameter_arrays()
    state = AdamState(params, cfg.learning_rate)
    use_mask = cfg.keep_prob < 1.0

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            clean = images[idx]
            corrupted = augment_batch(clean, aug_cfg, rng)
            x = corrupted.reshape(len(idx), -1)
            mask = sample_dropout_masks(net, cfg.keep_prob, len(idx), rng) if use_mask else None
            trace = forward(net, x, mask)
            recon = trace.output.reshape(clean.shape)
            values, grad = ssim_with_grad(recon, clean)
            loss = 1.0 - values.mean()
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at epoch {epoch}")
            grads = backward(net, trace, (-grad / len(idx)).reshape(len(idx), -1), mask)
            adam_step(params, grads.arrays(), state)
            total += loss * len(idx)
        history.append(total / n)
    return history
