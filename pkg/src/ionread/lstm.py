"""Recurrent register classifier over time-binned photon counts.

A single LSTM layer consumes one count vector per time bin; the final
hidden state feeds a dense softmax over all 2**N register states, so the
network sees photon arrival structure that total counts erase.  Gates are
packed [input, forget, output, candidate] along one axis and the forget
block starts at one so early training does not wipe the cell state.
Training reuses the ADADELTA rule and epoch protocol of the feed-forward
core.
"""
from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np

from .evaluate import confusion, fidelity, index_to_label, label_to_index, split
from .mlp import (
    AdadeltaState,
    NetworkError,
    TrainConfig,
    TrainingError,
    adadelta_step,
    softmax,
)

DEFAULT_HIDDEN_SIZE = 32


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class LstmModel:
    """LSTM over count sequences with a dense softmax readout."""

    def __init__(self, input_size: int, hidden_size: int, output_size: int, seed: int = 0):
        if input_size < 1 or hidden_size < 1:
            raise NetworkError("input_size and hidden_size must be >= 1")
        if output_size & (output_size - 1) or output_size < 2:
            raise NetworkError(
                f"output width must be a power of two >= 2, got {output_size}"
            )
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.output_size = output_size
        self.num_ions = output_size.bit_length() - 1
        rng = np.random.default_rng(seed)

        def init(fan_in: int, fan_out: int, shape) -> np.ndarray:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=shape)

        h = hidden_size
        self.w_input = init(input_size, h, (input_size, 4 * h))
        self.w_hidden = init(h, h, (h, 4 * h))
        self.bias = np.zeros(4 * h)
        self.bias[h : 2 * h] = 1.0
        self.w_readout = init(h, output_size, (h, output_size))
        self.b_readout = np.zeros(output_size)

    @property
    def parameters(self) -> list[np.ndarray]:
        return [self.w_input, self.w_hidden, self.bias, self.w_readout, self.b_readout]

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        for current, new in zip(self.parameters, params):
            current[...] = new

    def to_dict(self, metadata: dict | None = None) -> dict:
        return {
            "format": "ionread.lstm",
            "version": 1,
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "output_size": self.output_size,
            "w_input": self.w_input.tolist(),
            "w_hidden": self.w_hidden.tolist(),
            "bias": self.bias.tolist(),
            "w_readout": self.w_readout.tolist(),
            "b_readout": self.b_readout.tolist(),
            "metadata": metadata or {},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LstmModel":
        if data.get("format") != "ionread.lstm":
            raise NetworkError("not a recurrent model record")
        model = cls(data["input_size"], data["hidden_size"], data["output_size"])
        model.w_input = np.asarray(data["w_input"], dtype=float)
        model.w_hidden = np.asarray(data["w_hidden"], dtype=float)
        model.bias = np.asarray(data["bias"], dtype=float)
        model.w_readout = np.asarray(data["w_readout"], dtype=float)
        model.b_readout = np.asarray(data["b_readout"], dtype=float)
        return model


def initial_state(model: LstmModel, batch: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero hidden and cell state for a batch of fresh sequences."""
    return np.zeros((batch, model.hidden_size)), np.zeros((batch, model.hidden_size))


def step(
    model: LstmModel, x_t: np.ndarray, h: np.ndarray, c: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Advance one time bin; use with ``initial_state`` to stream counts."""
    hs = model.hidden_size
    z = x_t @ model.w_input + h @ model.w_hidden + model.bias
    gate_in = sigmoid(z[:, :hs])
    gate_forget = sigmoid(z[:, hs : 2 * hs])
    gate_out = sigmoid(z[:, 2 * hs : 3 * hs])
    candidate = np.tanh(z[:, 3 * hs :])
    c_next = gate_forget * c + gate_in * candidate
    h_next = gate_out * np.tanh(c_next)
    return h_next, c_next


def readout(model: LstmModel, h: np.ndarray) -> np.ndarray:
    return softmax(h @ model.w_readout + model.b_readout)


def _validate_sequences(model: LstmModel, sequences) -> np.ndarray:
    x = np.asarray(sequences, dtype=float)
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3 or x.shape[2] != model.input_size:
        raise NetworkError(
            f"expected sequences shaped (batch, bins, {model.input_size}), got {x.shape}"
        )
    if not np.all(np.isfinite(x)):
        raise NetworkError("non-finite count values")
    return x


def _forward_cached(model: LstmModel, x: np.ndarray):
    batch, bins, _ = x.shape
    hs = model.hidden_size
    h, c = initial_state(model, batch)
    cache = []
    for t in range(bins):
        z = x[:, t] @ model.w_input + h @ model.w_hidden + model.bias
        gate_in = sigmoid(z[:, :hs])
        gate_forget = sigmoid(z[:, hs : 2 * hs])
        gate_out = sigmoid(z[:, 2 * hs : 3 * hs])
        candidate = np.tanh(z[:, 3 * hs :])
        c_next = gate_forget * c + gate_in * candidate
        h_next = gate_out * np.tanh(c_next)
        cache.append((h, c, gate_in, gate_forget, gate_out, candidate, c_next))
        h, c = h_next, c_next
    probs = readout(model, h)
    return probs, h, cache


def forward(model: LstmModel, sequences) -> np.ndarray:
    """Class probabilities from full sequences, shape (batch, 2**N).

    An empty sequence (zero bins) yields the readout-bias prior.
    """
    x = _validate_sequences(model, sequences)
    return _forward_cached(model, x)[0]


def loss(model: LstmModel, sequences, class_indices) -> float:
    probs = forward(model, sequences)
    y = np.asarray(class_indices, dtype=np.int64)
    picked = probs[np.arange(y.size), y]
    return float(-np.log(np.maximum(picked, 1e-12)).mean())


def backward(model: LstmModel, sequences, class_indices) -> list[np.ndarray]:
    """Mean-batch gradients via backpropagation through time."""
    x = _validate_sequences(model, sequences)
    y = np.asarray(class_indices, dtype=np.int64)
    batch, bins, _ = x.shape
    probs, h_last, cache = _forward_cached(model, x)

    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch
    grad_w_readout = h_last.T @ delta
    grad_b_readout = delta.sum(axis=0)

    grad_w_input = np.zeros_like(model.w_input)
    grad_w_hidden = np.zeros_like(model.w_hidden)
    grad_bias = np.zeros_like(model.bias)
    d_h = delta @ model.w_readout.T
    d_c = np.zeros((batch, model.hidden_size))
    for t in range(bins - 1, -1, -1):
        h_prev, c_prev, gate_in, gate_forget, gate_out, candidate, c_now = cache[t]
        tanh_c = np.tanh(c_now)
        d_gate_out = d_h * tanh_c
        d_c = d_c + d_h * gate_out * (1.0 - tanh_c**2)
        d_gate_in = d_c * candidate
        d_candidate = d_c * gate_in
        d_gate_forget = d_c * c_prev
        d_z = np.concatenate(
            [
                d_gate_in * gate_in * (1.0 - gate_in),
                d_gate_forget * gate_forget * (1.0 - gate_forget),
                d_gate_out * gate_out * (1.0 - gate_out),
                d_candidate * (1.0 - candidate**2),
            ],
            axis=1,
        )
        grad_w_input += x[:, t].T @ d_z
        grad_w_hidden += h_prev.T @ d_z
        grad_bias += d_z.sum(axis=0)
        d_h = d_z @ model.w_hidden.T
        d_c = d_c * gate_forget
    return [grad_w_input, grad_w_hidden, grad_bias, grad_w_readout, grad_b_readout]


def predict(model: LstmModel, sequences) -> list[str]:
    probs = forward(model, sequences)
    indices = np.argmax(probs, axis=1)
    return [index_to_label(int(i), model.num_ions) for i in indices]


def train(
    sequences,
    labels: Sequence[str],
    hidden_size: int = DEFAULT_HIDDEN_SIZE,
    config: TrainConfig | None = None,
) -> tuple[LstmModel, list[dict]]:
    """Same protocol as the feed-forward core: stratified validation split,
    best-validation-fidelity weights, early stop after ``patience`` flat
    epochs, abort on non-finite loss."""
    config = config or TrainConfig()
    x = np.asarray(sequences, dtype=float)
    labels = list(labels)
    if x.ndim != 3:
        raise NetworkError(f"sequences must be (batch, bins, channels), got {x.shape}")
    if x.shape[0] != len(labels):
        raise NetworkError(f"{x.shape[0]} sequences for {len(labels)} labels")
    num_ions = len(labels[0])
    model = LstmModel(x.shape[2], hidden_size, 2**num_ions, seed=config.seed)
    train_idx, val_idx = split(labels, 1.0 - config.validation_fraction, config.seed)
    x_train, x_val = x[train_idx], x[val_idx]
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
            grads = backward(model, x_train[batch], y_train[batch])
            adadelta_step(model.parameters, grads, state, config.rho, config.epsilon)
            batch_loss = loss(model, x_train[batch], y_train[batch])
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


def bright_marginal(probs: np.ndarray, ion: int, num_ions: int) -> np.ndarray:
    """P(ion bright) summed over all register states with that bit set."""
    if not 0 <= ion < num_ions:
        raise NetworkError(f"ion {ion} outside register of {num_ions}")
    states = np.arange(probs.shape[-1])
    mask = (states >> (num_ions - 1 - ion)) & 1 == 1
    return np.atleast_2d(probs)[:, mask].sum(axis=1)


def probe(
    model: LstmModel,
    num_bins: int,
    feature_column: int,
    ion: int,
    photon_value: float = 1.0,
) -> np.ndarray:
    """Bright-state probability assigned to one photon, by arrival bin.

    Feeds the network ``num_bins`` otherwise empty sequences that differ
    only in which bin carries a single count on ``feature_column`` and
    returns the marginal P(ion bright) against arrival time.  Training sees
    scaled counts, so pass the scaled value of one photon.
    """
    if not 0 <= feature_column < model.input_size:
        raise NetworkError(f"feature column {feature_column} out of range")
    x = np.zeros((num_bins, num_bins, model.input_size))
    for t in range(num_bins):
        x[t, t, feature_column] = photon_value
    return bright_marginal(forward(model, x), ion, model.num_ions)


def save_model(model: LstmModel, path: str, metadata: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(metadata), fh)


def load_model(path: str) -> LstmModel:
    with open(path) as fh:
        return LstmModel.from_dict(json.load(fh))
