"""Minimal dense-layer network engine with explicit dropout masks.

Everything is float64 and deterministic given its inputs. Dropout is the
inverted kind: kept units are rescaled by 1/keep_prob so that running
without a mask needs no compensation. Masks are explicit immutable values
rather than hidden layer state, because the recursive inference scheme
needs to hold one mask fixed across several forward passes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionError, TrainingError, ValidationError
from . import _kernels

ACTIVATIONS = ("identity", "relu", "sigmoid")


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


@dataclass
class DenseLayer:
    """Affine map plus pointwise activation: act(W x + b)."""

    weights: np.ndarray  # [out_dim, in_dim]
    bias: np.ndarray  # [out_dim]
    activation: str

    def __post_init__(self):
        self.weights = _as_f64(self.weights)
        self.bias = _as_f64(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise DimensionError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError(
                f"bias length {self.bias.shape[0]} != weight rows {self.weights.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ValidationError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class Network:
    """Ordered dense layers with per-layer dropout eligibility flags.

    The final layer is never dropout-eligible; eligibility refers to a
    layer's *output* units being maskable.
    """

    def __init__(self, layers: list[DenseLayer], dropout_eligible: list[bool] | None = None):
        if not layers:
            raise ValidationError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(
                    f"layer output width {prev.out_dim} does not chain into input width {nxt.in_dim}"
                )
        if dropout_eligible is None:
            dropout_eligible = [False] * len(layers)
        if len(dropout_eligible) != len(layers):
            raise DimensionError("dropout_eligible must have one flag per layer")
        if dropout_eligible[-1]:
            raise ValidationError("the last layer must not be dropout-eligible")
        self.layers = layers
        self.dropout_eligible = list(dropout_eligible)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def eligible_widths(self) -> list[int]:
        return [
            layer.out_dim
            for layer, flag in zip(self.layers, self.dropout_eligible)
            if flag
        ]

    def parameter_arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved, in layer order."""
        arrays = []
        for layer in self.layers:
            arrays.append(layer.weights)
            arrays.append(layer.bias)
        return arrays

    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]


def init_network(
    widths: list[int],
    activations: list[str],
    rng: np.random.Generator,
    dropout_eligible: list[bool] | None = None,
) -> Network:
    """Glorot-uniform weights (limit sqrt(6/(fan_in+fan_out))), zero biases."""
    if len(activations) != len(widths) - 1:
        raise DimensionError("need one activation per layer")
    layers = []
    for fan_in, fan_out, act in zip(widths, widths[1:], activations):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(DenseLayer(weights, np.zeros(fan_out), act))
    return Network(layers, dropout_eligible)


@dataclass(frozen=True)
class DropoutMask:
    """Frozen per-layer keep indicators for one sampled subnetwork.

    `per_layer_keep` holds one 0/1 float array per dropout-eligible layer,
    in layer order. Arrays are either [width] (one mask) or [batch, width]
    (an independent mask per row, used when training on batches).
    """

    keep_prob: float
    per_layer_keep: tuple[np.ndarray, ...]

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValidationError(f"keep_prob must be in (0, 1], got {self.keep_prob}")
        frozen = []
        for keep in self.per_layer_keep:
            keep = _as_f64(keep)
            keep.flags.writeable = False
            frozen.append(keep)
        object.__setattr__(self, "per_layer_keep", tuple(frozen))

    def fingerprint(self) -> str:
        digest = hashlib.sha1()
        digest.update(np.float64(self.keep_prob).tobytes())
        for keep in self.per_layer_keep:
            digest.update(keep.tobytes())
        return digest.hexdigest()[:16]


def mask_fingerprint(mask: DropoutMask | None) -> str:
    return "none" if mask is None else mask.fingerprint()


def _check_mask(net: Network, mask: DropoutMask, batch: int) -> None:
    widths = net.eligible_widths
    if len(mask.per_layer_keep) != len(widths):
        raise DimensionError(
            f"mask has {len(mask.per_layer_keep)} layer vectors, network has "
            f"{len(widths)} dropout-eligible layers"
        )
    for keep, width in zip(mask.per_layer_keep, widths):
        if keep.shape[-1] != width:
            raise DimensionError(
                f"mask vector width {keep.shape[-1]} != layer width {width}"
            )
        if keep.ndim == 2 and keep.shape[0] not in (1, batch):
            raise DimensionError(
                f"mask batch size {keep.shape[0]} does not match input batch {batch}"
            )
        if keep.ndim > 2:
            raise DimensionError("mask vectors must be 1-D or 2-D")


def sample_dropout_mask(net: Network, keep_prob: float, rng: np.random.Generator) -> DropoutMask:
    """Independent Bernoulli(keep_prob) keep bit per unit of each eligible layer."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValidationError(f"keep_prob must be in (0, 1], got {keep_prob}")
    keeps = tuple(
        (rng.random(width) < keep_prob).astype(np.float64)
        for width in net.eligible_widths
    )
    return DropoutMask(keep_prob, keeps)


def sample_dropout_masks(
    net: Network, keep_prob: float, count: int, rng: np.random.Generator
) -> DropoutMask:
    """One independent mask per batch row, packed as [count, width] arrays."""
    if not 0.0 < keep_prob <= 1.0:
        raise ValidationError(f"keep_prob must be in (0, 1], got {keep_prob}")
    keeps = tuple(
        (rng.random((count, width)) < keep_prob).astype(np.float64)
        for width in net.eligible_widths
    )
    return DropoutMask(keep_prob, keeps)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    return expit(z)


def _activation_deriv(post: np.ndarray, activation: str) -> np.ndarray | None:
    """Derivative d(act)/d(pre) expressed through the post-activation value."""
    if activation == "identity":
        return None
    if activation == "relu":
        return (post > 0.0).astype(np.float64)
    return post * (1.0 - post)


@dataclass
class ActivationTrace:
    """Everything forward() saw, as needed to run backward()."""

    net: Network
    layer_inputs: list[np.ndarray]  # input to each layer, [batch, in_dim]
    post_activations: list[np.ndarray]  # act(W x + b) per layer, pre-mask
    mask_id: str
    single: bool  # input was a 1-D vector

    @property
    def output(self) -> np.ndarray:
        out = self.post_activations[-1]
        return out[0] if self.single else out


def forward(net: Network, x: np.ndarray, mask: DropoutMask | None = None) -> ActivationTrace:
    """Run the network, applying the mask to eligible layer outputs.

    `x` is [in_dim] or [batch, in_dim]. Masked outputs are rescaled by
    1/keep_prob (inverted dropout). Deterministic for fixed (net, x, mask).
    """
    x = _as_f64(x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(
            f"input shape {x.shape} does not match network input width {net.input_dim}"
        )
    if not np.isfinite(x).all():
        raise ValidationError("network input contains non-finite values")
    if mask is not None:
        _check_mask(net, mask, x.shape[0])
        inv_keep = 1.0 / mask.keep_prob

    layer_inputs = []
    post_activations = []
    current = x
    eligible_idx = 0
    for i, layer in enumerate(net.layers):
        layer_inputs.append(current)
        post = _activate(current @ layer.weights.T + layer.bias, layer.activation)
        post_activations.append(post)
        if net.dropout_eligible[i]:
            if mask is not None:
                current = post * (mask.per_layer_keep[eligible_idx] * inv_keep)
            else:
                current = post
            eligible_idx += 1
        else:
            current = post
    return ActivationTrace(net, layer_inputs, post_activations, mask_fingerprint(mask), single)


def forward_value(net: Network, x: np.ndarray, mask: DropoutMask | None = None) -> np.ndarray:
    """forward() when only the final output is needed."""
    return forward(net, x, mask).output


@dataclass
class ParamGradients:
    """Per-layer gradients, shaped exactly like the parameters."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        arrays = []
        for w, b in zip(self.weights, self.biases):
            arrays.append(w)
            arrays.append(b)
        return arrays


def backward(
    net: Network,
    trace: ActivationTrace,
    grad_output: np.ndarray,
    mask: DropoutMask | None = None,
) -> ParamGradients:
    """Backpropagate d(loss)/d(output) to parameter gradients.

    Batched traces produce gradients summed over the batch; any 1/batch
    weighting belongs in `grad_output`. Masked units transmit zero gradient.
    """
    if trace.net is not net:
        raise ValidationError("trace was produced by a different network")
    if trace.mask_id != mask_fingerprint(mask):
        raise ValidationError("trace was produced under a different dropout mask")
    grad_output = _as_f64(grad_output)
    if grad_output.ndim == 1:
        grad_output = grad_output[None, :]
    if grad_output.shape != trace.post_activations[-1].shape:
        raise DimensionError(
            f"grad_output shape {grad_output.shape} does not match network output "
            f"shape {trace.post_activations[-1].shape}"
        )
    if mask is not None:
        inv_keep = 1.0 / mask.keep_prob
        eligible_ordinal = np.cumsum(net.dropout_eligible) - 1

    n_layers = len(net.layers)
    grad_w: list[np.ndarray | None] = [None] * n_layers
    grad_b: list[np.ndarray | None] = [None] * n_layers
    delta = grad_output
    for i in range(n_layers - 1, -1, -1):
        layer = net.layers[i]
        deriv = _activation_deriv(trace.post_activations[i], layer.activation)
        dz = delta if deriv is None else delta * deriv
        grad_w[i] = dz.T @ trace.layer_inputs[i]
        grad_b[i] = dz.sum(axis=0)
        if i > 0:
            delta = dz @ layer.weights
            if net.dropout_eligible[i - 1] and mask is not None:
                keep = mask.per_layer_keep[eligible_ordinal[i - 1]]
                delta = delta * (keep * inv_keep)
    return ParamGradients(grad_w, grad_b)


class AdamState:
    """Bias-corrected Adam optimizer state over a fixed list of arrays."""

    def __init__(
        self,
        param_arrays: list[np.ndarray],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.first_moment = [np.zeros_like(p) for p in param_arrays]
        self.second_moment = [np.zeros_like(p) for p in param_arrays]


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """Update `params` in place with one Adam step; increments step_count.

    Raises TrainingError naming the offending array and flat index when a
    gradient entry is non-finite (the state must then be discarded).
    """
    if len(params) != len(state.first_moment) or len(grads) != len(params):
        raise DimensionError("params/grads do not match the optimizer state")
    step = state.step_count + 1
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for array {k}"
            )
        bad = _kernels.adam_update(
            p.reshape(-1),
            _as_f64(g).reshape(-1),
            state.first_moment[k].reshape(-1),
            state.second_moment[k].reshape(-1),
            step,
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon,
        )
        if bad >= 0:
            raise TrainingError(
                f"non-finite gradient in parameter array {k} at flat index {bad}"
            )
    state.step_count = step
    return state
