"""Feed-forward softmax classifier over register states, written on numpy.

Two rectified hidden layers feed a softmax over all 2**N register states;
training minimises cross-entropy with the adaptive per-parameter step rule
of ADADELTA, so there is no learning-rate schedule to tune.  Gradients are
plain hand-derived backpropagation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evaluate import confusion, fidelity, index_to_label, label_to_index, split

PROBABILITY_FLOOR = 1e-12
HIDDEN_WIDTH_RANGE = (8, 40)


class NetworkError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting the row maximum."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


@dataclass
class TrainConfig:
    batch_size: int = 128
    epochs: int = 50
    rho: float = 0.95
    epsilon: float = 1e-6
    validation_fraction: float = 0.1
    patience: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise NetworkError("batch_size, epochs and patience must be >= 1")
        if not 0.0 < self.rho < 1.0:
            raise NetworkError(f"rho must be in (0, 1), got {self.rho}")
        if self.epsilon <= 0.0:
            raise NetworkError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.validation_fraction < 1.0:
            raise NetworkError("validation_fraction must be inside (0, 1)")


class MlpModel:
    """Input -> hidden -> hidden -> softmax classifier.

    Weights start uniform in +-sqrt(6 / (fan_in + fan_out)), biases at zero.
    """

    def __init__(self, layer_sizes: Sequence[int], seed: int = 0):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) != 4:
            raise NetworkError(
                f"layer_sizes must be [input, hidden, hidden, output], got {layer_sizes}"
            )
        if any(s < 1 for s in layer_sizes):
            raise NetworkError(f"layer sizes must be >= 1, got {layer_sizes}")
        lo, hi = HIDDEN_WIDTH_RANGE
        for width in layer_sizes[1:3]:
            if not lo <= width <= hi:
                raise NetworkError(f"hidden width {width} outside [{lo}, {hi}]")
        out = layer_sizes[3]
        if out & (out - 1) or out < 2:
            raise NetworkError(f"output width must be a power of two >= 2, got {out}")
        self.layer_sizes = layer_sizes
        self.num_ions = out.bit_length() - 1
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def parameters(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        for current, new in zip(self.parameters, params):
            current[...] = new

    def to_dict(self, metadata: dict | None = None) -> dict:
        return {
            "format": "ionread.mlp",
            "version": 1,
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "metadata": metadata or {},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpModel":
        if data.get("format") != "ionread.mlp":
            raise NetworkError("not a feed-forward model record")
        model = cls(data["layer_sizes"])
        model.weights = [np.asarray(w, dtype=float) for w in data["weights"]]
        model.biases = [np.asarray(b, dtype=float) for b in data["biases"]]
        return model


def _validate_input(model: MlpModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.layer_sizes[0]:
        raise NetworkError(
            f"expected {model.layer_sizes[0]} features, got {x.shape[1]}"
        )
    if not np.all(np.isfinite(x)):
        raise NetworkError("non-finite feature values")
    return x


def _forward_cached(model: MlpModel, x: np.ndarray):
    a1 = relu(x @ model.weights[0] + model.biases[0])
    a2 = relu(a1 @ model.weights[1] + model.biases[1])
    logits = a2 @ model.weights[2] + model.biases[2]
    return a1, a2, softmax(logits)


def forward(model: MlpModel, x) -> np.ndarray:
    """Class probabilities, shape (batch, 2**N).  Rows sum to one."""
    x = _validate_input(model, x)
    return _forward_cached(model, x)[2]


def loss(model: MlpModel, x, class_indices) -> float:
    """Mean cross-entropy, with predicted probabilities floored at 1e-12."""
    probs = forward(model, x)
    y = np.asarray(class_indices, dtype=np.int64)
    picked = probs[np.arange(y.size), y]
    return float(-np.log(np.maximum(picked, PROBABILITY_FLOOR)).mean())


def backward(model: MlpModel, x, class_indices) -> list[np.ndarray]:
    """Mean-batch gradients in ``model.parameters`` order.

    The rectifier contributes zero gradient at exactly zero input.
    """
    x = _validate_input(model, x)
    y = np.asarray(class_indices, dtype=np.int64)
    a1, a2, probs = _forward_cached(model, x)
    batch = x.shape[0]
    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch
    grad_w3 = a2.T @ delta
    grad_b3 = delta.sum(axis=0)
    back2 = (delta @ model.weights[2].T) * (a2 > 0.0)
    grad_w2 = a1.T @ back2
    grad_b2 = back2.sum(axis=0)
    back1 = (back2 @ model.weights[1].T) * (a1 > 0.0)
    grad_w1 = x.T @ back1
    grad_b1 = back1.sum(axis=0)
    return [grad_w1, grad_w2, grad_w3, grad_b1, grad_b2, grad_b3]


class AdadeltaState:
    """Running second moments of gradients and updates, one per parameter."""

    def __init__(self, params: Sequence[np.ndarray]):
        self.grad_sq = [np.zeros_like(p) for p in params]
        self.delta_sq = [np.zeros_like(p) for p in params]


def adadelta_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdadeltaState,
    rho: float = 0.95,
    epsilon: float = 1e-6,
) -> None:
    """One in-place ADADELTA update.

    g2 <- rho g2 + (1-rho) g**2
    dx = -sqrt(d2 + eps) / sqrt(g2 + eps) * g
    d2 <- rho d2 + (1-rho) dx**2
    """
    for p, g, g2, d2 in zip(params, grads, state.grad_sq, state.delta_sq):
        g2 *= rho
        g2 += (1.0 - rho) * g * g
        step = -np.sqrt(d2 + epsilon) / np.sqrt(g2 + epsilon) * g
        d2 *= rho
        d2 += (1.0 - rho) * step * step
        p += step


def predict(model: MlpModel, features) -> list[str]:
    """Most probable register label per shot; ties go to the lowest index."""
    probs = forward(model, features)
    indices = np.argmax(probs, axis=1)
    return [index_to_label(int(i), model.num_ions) for i in indices]


def train(
    features,
    labels: Sequence[str],
    hidden: tuple[int, int],
    config: TrainConfig | None = None,
) -> tuple[MlpModel, list[dict]]:
    """Train on labelled feature rows; returns the best-validation model.

    A stratified ``validation_fraction`` of the rows is held out; after each
    epoch the register fidelity on that held-out part is recorded and the
    parameters with the best validation fidelity so far are kept.  Training
    stops early once ``patience`` epochs pass without improvement, and
    aborts with diagnostics if the loss stops being finite.
    """
    config = config or TrainConfig()
    features = np.asarray(features, dtype=float)
    labels = list(labels)
    if features.shape[0] != len(labels):
        raise NetworkError(
            f"{features.shape[0]} feature rows for {len(labels)} labels"
        )
    num_ions = len(labels[0])
    model = MlpModel(
        [features.shape[1], hidden[0], hidden[1], 2**num_ions], seed=config.seed
    )
    train_idx, val_idx = split(labels, 1.0 - config.validation_fraction, config.seed)
    x_train, x_val = features[train_idx], features[val_idx]
    y_train = np.asarray([label_to_index(labels[i]) for i in train_idx])
    val_labels = [labels[i] for i in val_idx]

    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 1)))
    state = AdadeltaState(model.parameters)
    best_params = model.copy_parameters()
    best_fidelity = -1.0
    best_epoch = -1
    history: list[dict] = []
    for epoch in range(config.epochs):
        order = rng.permutation(x_train.shape[0])
        epoch_loss = 0.0
        for start in range(0, order.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            x, y = x_train[batch], y_train[batch]
            grads = backward(model, x, y)
            adadelta_step(model.parameters, grads, state, config.rho, config.epsilon)
            batch_loss = loss(model, x, y)
            if not math.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch offset {start}"
                )
            epoch_loss += batch_loss * batch.size
        epoch_loss /= order.size
        val_fidelity = fidelity(confusion(predict(model, x_val), val_labels)).average
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss, "val_fidelity": val_fidelity}
        )
        if val_fidelity > best_fidelity:
            best_fidelity = val_fidelity
            best_epoch = epoch
            best_params = model.copy_parameters()
        elif epoch - best_epoch >= config.patience:
            break
    model.set_parameters(best_params)
    return model, history


def save_model(model: MlpModel, path: str, metadata: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(metadata), fh)


def load_model(path: str) -> MlpModel:
    with open(path) as fh:
        return MlpModel.from_dict(json.load(fh))
