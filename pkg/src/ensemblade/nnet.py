"""Bias-free multilayer perceptrons with hand-rolled reverse-mode gradients.

The model family is intentionally small: every hidden layer applies one
element-wise activation, the final layer is linear, and class probabilities
come from a numerically stable softmax head. Because the structure is fixed,
input and parameter gradients reduce to a short chain of matrix products and
no general autodiff tape is needed.

Conventions used throughout the package:

* ``weights[l]`` has shape ``(layer_widths[l + 1], layer_widths[l])`` and maps
  activations forward as ``a_next = act(weights[l] @ a)``.
* The ReLU derivative at exactly zero is taken to be zero.
* Logs of probabilities are clamped at ``EPS_LOG`` so losses stay finite.

All operations are pure. Models are immutable values; every function returns
fresh arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

EPS_LOG = 1e-12


class Activation(str, Enum):
    """Element-wise nonlinearity applied to every hidden layer."""

    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths plus the hidden activation.

    ``layer_widths[0]`` is the input dimension, ``layer_widths[-1]`` the class
    count. The final layer stays linear; softmax sits on top of it.
    """

    layer_widths: tuple[int, ...]
    activation: Activation = Activation.TANH

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activation", Activation(self.activation))
        if len(widths) < 2:
            raise ValueError("architecture needs an input layer and an output layer")
        if any(w <= 0 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def num_layers(self) -> int:
        """Number of weight matrices."""
        return len(self.layer_widths) - 1


@dataclass(frozen=True)
class MlpModel:
    """An architecture together with one weight matrix per layer."""

    arch: MlpArchitecture
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        frozen = []
        widths = self.arch.layer_widths
        if len(self.weights) != self.arch.num_layers:
            raise ValueError(
                f"expected {self.arch.num_layers} weight matrices, got {len(self.weights)}"
            )
        for l, w in enumerate(self.weights):
            w = np.asarray(w, dtype=np.float64)
            want = (widths[l + 1], widths[l])
            if w.shape != want:
                raise ValueError(f"weights[{l}] has shape {w.shape}, expected {want}")
            if not np.all(np.isfinite(w)):
                raise ValueError(f"weights[{l}] contains non-finite entries")
            w = w.copy()
            w.setflags(write=False)
            frozen.append(w)
        object.__setattr__(self, "weights", tuple(frozen))


@dataclass(frozen=True)
class ForwardTrace:
    """Intermediate state of one forward pass.

    ``activations`` holds the input followed by every hidden activation, so it
    has one entry per layer excluding the logits.
    """

    activations: tuple[np.ndarray, ...]
    logits: np.ndarray
    probs: np.ndarray


@dataclass(frozen=True)
class LabeledExample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("features must be a 1-d vector")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "label", int(self.label))
        if self.label < 0:
            raise ValueError("labels are non-negative class indices")


def init_mlp(arch: MlpArchitecture, seed: int) -> MlpModel:
    """Draw each weight matrix uniformly from [-s, s], s = sqrt(6 / (fan_in + fan_out)).

    Deterministic given the seed: matrices are drawn layer by layer from a
    single generator.
    """
    rng = np.random.default_rng(seed)
    widths = arch.layer_widths
    weights = []
    for l in range(arch.num_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        s = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_out, fan_in)))
    return MlpModel(arch=arch, weights=tuple(weights))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis (max is subtracted before exp)."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def _apply_activation(kind: Activation, s: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(s, 0.0)
    if kind is Activation.TANH:
        return np.tanh(s)
    return 1.0 / (1.0 + np.exp(-s))


def _activation_derivative(kind: Activation, a: np.ndarray) -> np.ndarray:
    # Derivative expressed through the activation value itself. For ReLU the
    # value is zero exactly where the pre-activation was <= 0, which encodes
    # the derivative-zero-at-kink convention.
    if kind is Activation.RELU:
        return (a > 0.0).astype(np.float64)
    if kind is Activation.TANH:
        return 1.0 - a * a
    return a * (1.0 - a)


def forward_batch(model: MlpModel, X: np.ndarray):
    """Run the network on a batch of row vectors.

    Returns ``(activations, logits, probs)`` where ``activations`` is a list of
    ``(n, width)`` arrays starting with the input batch.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.arch.input_dim:
        raise ValueError(
            f"expected batch of shape (n, {model.arch.input_dim}), got {X.shape}"
        )
    acts = [X]
    a = X
    for w in model.weights[:-1]:
        a = _apply_activation(model.arch.activation, a @ w.T)
        acts.append(a)
    logits = a @ model.weights[-1].T
    return acts, logits, softmax(logits)


def forward(model: MlpModel, x: np.ndarray) -> ForwardTrace:
    """Full forward pass for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward takes a single feature vector; see forward_batch")
    acts, logits, probs = forward_batch(model, x[None, :])
    return ForwardTrace(
        activations=tuple(a[0] for a in acts),
        logits=logits[0],
        probs=probs[0],
    )


def predict_class(probs: np.ndarray) -> int:
    """Index of the highest score; ties resolve to the lowest index."""
    return int(np.argmax(probs))


def cross_entropy(probs: np.ndarray, label: int) -> float:
    """-log(probs[label]) with the argument clamped below at EPS_LOG."""
    p = float(np.asarray(probs)[label])
    return -math.log(max(p, EPS_LOG))


def cross_entropy_batch(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    p = probs[np.arange(probs.shape[0]), labels]
    return -np.log(np.maximum(p, EPS_LOG))


def dprobs_to_dlogits(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    """Backward step through softmax: rows of d(loss)/dprobs to d(loss)/dlogits."""
    inner = np.sum(dprobs * probs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def ce_dlogits(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d/dlogits of the clamped cross entropy, one row per example.

    Equal to probs - onehot(label) wherever the clamp is inactive; rows whose
    true-class probability sits below EPS_LOG get a zero gradient because the
    loss is constant there.
    """
    n = probs.shape[0]
    dz = probs.copy()
    dz[np.arange(n), labels] -= 1.0
    live = probs[np.arange(n), labels] >= EPS_LOG
    dz[~live] = 0.0
    return dz


def backprop(model: MlpModel, acts, dlogits: np.ndarray, *, want_param_grads: bool,
             want_input_grads: bool):
    """Reverse pass from gradients on the logits.

    ``acts`` is the activation list produced by :func:`forward_batch` for the
    same batch. Returns ``(param_grads, input_grads)``; entries not requested
    are ``None``. Parameter gradients are summed over the batch, so per-example
    weighting is applied by scaling rows of ``dlogits`` beforehand.
    """
    kind = model.arch.activation
    param_grads = [None] * model.arch.num_layers if want_param_grads else None
    d = dlogits
    for l in range(model.arch.num_layers - 1, -1, -1):
        if want_param_grads:
            param_grads[l] = d.T @ acts[l]
        d = d @ model.weights[l]
        if l > 0:
            d = d * _activation_derivative(kind, acts[l])
    input_grads = d if want_input_grads else None
    return param_grads, input_grads


def input_gradient(model: MlpModel, x: np.ndarray, label: int) -> np.ndarray:
    """Gradient of the cross-entropy loss at (x, label) with respect to x.

    Accumulated as sum_i (h_i - [i == label]) dz_i/dx via one reverse pass.
    """
    x = np.asarray(x, dtype=np.float64)
    acts, _, probs = forward_batch(model, x[None, :])
    dz = ce_dlogits(probs, np.array([label]))
    _, gx = backprop(model, acts, dz, want_param_grads=False, want_input_grads=True)
    return gx[0]


def input_gradient_batch(model: MlpModel, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    acts, _, probs = forward_batch(model, X)
    dz = ce_dlogits(probs, np.asarray(labels))
    _, gx = backprop(model, acts, dz, want_param_grads=False, want_input_grads=True)
    return gx


def param_gradients(model: MlpModel, batch: Sequence[tuple[LabeledExample, float]]):
    """Gradients of the weighted cross entropy sum(w_i * ce_i) per weight matrix.

    The weights are the mean coefficients: pass 1/n for an unweighted batch
    mean. An all-zero weighting therefore yields exactly zero gradients.
    """
    if not batch:
        raise ValueError("param_gradients needs a non-empty batch")
    X = np.stack([ex.features for ex, _ in batch])
    labels = np.array([ex.label for ex, _ in batch])
    coeffs = np.array([float(w) for _, w in batch])
    acts, _, probs = forward_batch(model, X)
    dz = ce_dlogits(probs, labels) * coeffs[:, None]
    grads, _ = backprop(model, acts, dz, want_param_grads=True, want_input_grads=False)
    return grads


def sgd_step(model: MlpModel, grads: Sequence[np.ndarray], lr: float) -> MlpModel:
    """One plain gradient step: weights - lr * grads, returned as a new model."""
    if len(grads) != model.arch.num_layers:
        raise ValueError("one gradient per weight matrix required")
    new_weights = []
    for w, g in zip(model.weights, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != w.shape:
            raise ValueError(f"gradient shape {g.shape} does not match weights {w.shape}")
        new_weights.append(w - lr * g)
    return MlpModel(arch=model.arch, weights=tuple(new_weights))


def save_model(model: MlpModel, path) -> None:
    """Write the model as JSON with full-precision weights."""
    payload = {
        "arch": {
            "widths": list(model.arch.layer_widths),
            "activation": model.arch.activation.value,
        },
        "weights": [w.tolist() for w in model.weights],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_model(path) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    arch = MlpArchitecture(
        layer_widths=tuple(payload["arch"]["widths"]),
        activation=Activation(payload["arch"]["activation"].lower()),
    )
    weights = tuple(np.array(w, dtype=np.float64) for w in payload["weights"])
    return MlpModel(arch=arch, weights=weights)
