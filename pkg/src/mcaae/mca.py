"""Monte-Carlo attractor inference.

One prediction = M stochastic runs. Each run samples a fresh dropout mask,
holds it fixed through N encode/decode recursions, and classifies the
latent code of the final recursion with a small MLP (evaluated without
dropout). The M class distributions are averaged; the normalized entropy
of the average is the uncertainty score, thresholded for accept/reject.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autoencoder import Autoencoder, TrainConfig, encode, reconstruct
from .errors import TrainingError, ValidationError
from .nncore import (
    AdamState,
    DropoutMask,
    Network,
    adam_step,
    backward,
    forward,
    forward_value,
    init_network,
    mask_fingerprint,
    sample_dropout_mask,
    sample_dropout_masks,
)

StepObserver = Callable[[int, int, str], None]  # (run_index, step_index, mask_id)


@dataclass
class LatentClassifier:
    """Single-hidden-layer MLP over latent codes; the hidden width equals
    the latent dimension. The network emits logits; predict_proba applies
    the softmax."""

    net: Network

    def __post_init__(self):
        if len(self.net.layers) != 2:
            raise ValidationError("latent classifier must have exactly one hidden layer")
        hidden = self.net.layers[0]
        if hidden.out_dim != hidden.in_dim:
            raise ValidationError(
                f"hidden width {hidden.out_dim} must equal the latent width {hidden.in_dim}"
            )

    @property
    def latent_dim(self) -> int:
        return self.net.input_dim

    @property
    def num_classes(self) -> int:
        return self.net.output_dim


def build_latent_classifier(
    latent_dim: int, num_classes: int, rng: np.random.Generator
) -> LatentClassifier:
    if num_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {num_classes}")
    net = init_network(
        [latent_dim, latent_dim, num_classes],
        ["relu", "identity"],
        rng,
        dropout_eligible=[True, False],
    )
    return LatentClassifier(net)


def save_classifier(path, clf: LatentClassifier) -> None:
    from .checkpoint import save_network

    save_network(path, clf.net)


def load_classifier(path) -> LatentClassifier:
    from .checkpoint import load_network

    net = load_network(path)
    net.dropout_eligible = [True] * (len(net.layers) - 1) + [False]
    return LatentClassifier(net)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def predict_proba(clf: LatentClassifier, z: np.ndarray) -> np.ndarray:
    """Class distribution(s) for latent code(s); dropout is never applied."""
    return softmax(forward_value(clf.net, z))


def latent_codes(
    ae: Autoencoder,
    x: np.ndarray,
    n_recursions: int,
    mask: DropoutMask | None,
    step_observer: StepObserver | None = None,
    run_index: int = 0,
) -> np.ndarray:
    """Latent code after n recursions under one frozen mask.

    n = 0 encodes the input directly; n >= 1 returns the code of the n-th
    recursion, i.e. encode(f^(n-1)(x)) where f = decode . encode.
    """
    if n_recursions < 0:
        raise ValidationError(f"n_recursions must be >= 0, got {n_recursions}")
    if n_recursions == 0:
        if step_observer is not None:
            step_observer(run_index, 0, mask_fingerprint(mask))
        return encode(ae, x, mask)
    current = x
    for step in range(1, n_recursions + 1):
        if step_observer is not None:
            step_observer(run_index, step, mask_fingerprint(mask))
        if step < n_recursions:
            current = reconstruct(ae, current, mask)
    return encode(ae, current, mask)


def train_classifier(
    ae: Autoencoder,
    images: np.ndarray,
    labels: np.ndarray,
    n_recursions: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[LatentClassifier, list[float]]:
    """Cross-entropy training on latent codes of the n-th recursion.

    Latents are produced with dropout active (a fresh mask per sample per
    step, frozen within the recursion); the classifier's own hidden layer
    also trains under dropout at the same keep probability. Autoencoder
    parameters are never touched.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(labels.max()) + 1 if len(labels) else 0
    if n_classes < 2:
        raise ValidationError(f"need at least 2 classes, got {n_classes}")
    clf = build_latent_classifier(ae.latent_dim, n_classes, rng)
    params = clf.net.parameter_arrays()
    state = AdamState(params, cfg.learning_rate)

    n = len(images)
    flat = images.reshape(n, -1)
    combined = ae.combined()
    use_mask = cfg.keep_prob < 1.0
    onehot = np.eye(n_classes)[labels]

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            ae_mask = (
                sample_dropout_masks(combined, cfg.keep_prob, len(idx), rng)
                if use_mask
                else None
            )
            z = latent_codes(ae, flat[idx], n_recursions, ae_mask)
            clf_mask = (
                sample_dropout_masks(clf.net, cfg.keep_prob, len(idx), rng)
                if use_mask
                else None
            )
            trace = forward(clf.net, z, clf_mask)
            logp = _log_softmax(trace.output)
            loss = -float(logp[np.arange(len(idx)), labels[idx]].mean())
            if not np.isfinite(loss):
                raise TrainingError(f"classifier loss diverged at epoch {epoch}")
            grad = (np.exp(logp) - onehot[idx]) / len(idx)
            grads = backward(clf.net, trace, grad, clf_mask)
            adam_step(params, grads.arrays(), state)
            total += loss * len(idx)
        history.append(total / n)
    return clf, history


@dataclass
class PredictiveDistribution:
    """Per-run class distributions y_l, their mean, and its normalized
    entropy in [0, 1]."""

    per_run: np.ndarray  # [m, num_classes]
    mean_p: np.ndarray  # [num_classes]
    entropy: float


def normalized_entropy(p: np.ndarray) -> float:
    """Shannon entropy of a distribution over C >= 2 classes, divided by
    log(C); 0 log 0 counts as 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.shape[0] < 2:
        raise ValidationError("expected a probability vector over >= 2 classes")
    if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-9:
        raise ValidationError("entries must be non-negative and sum to 1 within 1e-9")
    q = np.clip(p, 0.0, None)
    nonzero = q > 0.0
    h = -np.sum(q[nonzero] * np.log(q[nonzero])) / np.log(p.shape[0])
    return float(min(max(h, 0.0), 1.0))


def mca_predict_with_masks(
    ae: Autoencoder,
    clf: LatentClassifier,
    x: np.ndarray,
    masks: Sequence[DropoutMask | None],
    n_recursions: int,
    step_observer: StepObserver | None = None,
) -> PredictiveDistribution:
    """Deterministic core: one run per provided mask."""
    if not masks:
        raise ValidationError("need at least one mask (one run)")
    per_run = np.stack(
        [
            predict_proba(
                clf, latent_codes(ae, x, n_recursions, mask, step_observer, run)
            )
            for run, mask in enumerate(masks)
        ]
    )
    mean_p = per_run.mean(axis=0)
    return PredictiveDistribution(per_run, mean_p, normalized_entropy(mean_p))


def mca_predict(
    ae: Autoencoder,
    clf: LatentClassifier,
    x: np.ndarray,
    m_inferences: int,
    n_recursions: int,
    rng: np.random.Generator,
    keep_prob: float = 0.67,
    step_observer: StepObserver | None = None,
) -> PredictiveDistribution:
    """M runs, each with a freshly sampled mask held fixed through all
    recursions; the classifier runs without dropout."""
    if m_inferences < 1:
        raise ValidationError(f"m_inferences must be >= 1, got {m_inferences}")
    if n_recursions < 0:
        raise ValidationError(f"n_recursions must be >= 0, got {n_recursions}")
    combined = ae.combined()
    masks = [
        sample_dropout_mask(combined, keep_prob, rng) for _ in range(m_inferences)
    ]
    return mca_predict_with_masks(ae, clf, x, masks, n_recursions, step_observer)


@dataclass
class McaBatchResult:
    per_run_probs: np.ndarray  # [n, m, num_classes]
    mean_p: np.ndarray  # [n, num_classes]
    entropies: np.ndarray  # [n]

    @property
    def per_run_argmax(self) -> np.ndarray:
        return self.per_run_probs.argmax(axis=2)

    @property
    def predicted_labels(self) -> np.ndarray:
        return self.mean_p.argmax(axis=1)


def run_masks_for_sample(
    ae: Autoencoder, seed: int, sample_index: int, run_index: int, keep_prob: float
) -> DropoutMask:
    """The mask a given (sample, run) pair observes under `seed`.

    Sub-seeding by (seed, sample, run) makes batched evaluation order- and
    schedule-independent; mca_predict_dataset uses exactly these masks.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, sample_index, run_index)))
    return sample_dropout_mask(ae.combined(), keep_prob, rng)


def mca_predict_dataset(
    ae: Autoencoder,
    clf: LatentClassifier,
    images: np.ndarray,
    m_inferences: int,
    n_recursions: int,
    keep_prob: float,
    seed: int,
) -> McaBatchResult:
    """Batched MCA prediction over [n, h, w] images.

    Equivalent to per-sample mca_predict_with_masks using the masks from
    run_masks_for_sample; batching only changes the arithmetic grouping.
    """
    if m_inferences < 1:
        raise ValidationError(f"m_inferences must be >= 1, got {m_inferences}")
    if n_recursions < 0:
        raise ValidationError(f"n_recursions must be >= 0, got {n_recursions}")
    n = len(images)
    flat = np.ascontiguousarray(images, dtype=np.float64).reshape(n, -1)
    combined = ae.combined()
    widths = combined.eligible_widths
    per_run = np.empty((n, m_inferences, clf.num_classes))
    for run in range(m_inferences):
        if keep_prob < 1.0:
            keeps = [np.empty((n, w)) for w in widths]
            for i in range(n):
                r = np.random.default_rng(np.random.SeedSequence((seed, i, run)))
                for keep, width in zip(keeps, widths):
                    keep[i] = r.random(width) < keep_prob
            mask = DropoutMask(keep_prob, tuple(keeps))
        else:
            mask = None
        z = latent_codes(ae, flat, n_recursions, mask)
        per_run[:, run, :] = predict_proba(clf, z)
    mean_p = per_run.mean(axis=1)
    entropies = np.array([normalized_entropy(p) for p in mean_p])
    return McaBatchResult(per_run, mean_p, entropies)


@dataclass
class Decision:
    """Accept with the argmax label when entropy <= threshold, else reject.
    The label is kept on rejections as diagnostic metadata."""

    accepted: bool
    label: int
    entropy: float
    threshold: float

    @property
    def outcome(self) -> str:
        return "accepted" if self.accepted else "rejected"


def decide(pd: PredictiveDistribution, threshold: float) -> Decision:
    """Boundary inclusive: entropy == threshold is accepted. Argmax ties
    resolve to the smallest class index."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must be in [0, 1], got {threshold}")
    return Decision(
        accepted=pd.entropy <= threshold,
        label=int(np.argmax(pd.mean_p)),
        entropy=pd.entropy,
        threshold=threshold,
    )


def write_predictions_csv(
    path,
    result: McaBatchResult,
    true_labels: np.ndarray,
    threshold: float,
    sample_ids: Sequence | None = None,
) -> None:
    """One row per sample: id, true label, per-run argmaxes, mean
    probabilities, entropy, predicted label, decision."""
    n, m, c = result.per_run_probs.shape
    ids = sample_ids if sample_ids is not None else range(n)
    argmaxes = result.per_run_argmax
    predicted = result.predicted_labels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "true_label"]
            + [f"run_{l}_argmax" for l in range(m)]
            + [f"mean_p_{k}" for k in range(c)]
            + ["entropy", "predicted_label", "decision"]
        )
        for i, sid in enumerate(ids):
            outcome = "accepted" if result.entropies[i] <= threshold else "rejected"
            writer.writerow(
                [sid, int(true_labels[i])]
                + [int(a) for a in argmaxes[i]]
                + [f"{p:.17g}" for p in result.mean_p[i]]
                + [f"{result.entropies[i]:.17g}", int(predicted[i]), outcome]
            )
