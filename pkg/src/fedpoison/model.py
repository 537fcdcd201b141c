"""Dense feedforward softmax classifier trained with minibatch SGD.

Parameters live in one flat float64 vector. Layer ``l`` occupies a
contiguous block holding its weight matrix (shape ``(out, in)``, row-major,
so row ``c`` holds the incoming weights of output node ``c``) followed by its
bias vector. The structured accessors return views into the flat vector.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LabeledDataset, Partition

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Architecture:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("an architecture needs at least input and output layers")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ValueError("need at least two output classes")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        """Number of weight layers."""
        return len(self.layer_sizes) - 1

    def layer_slices(self) -> list[tuple[slice, slice]]:
        """Flat-vector (weight, bias) slices for each weight layer."""
        out, offset = [], 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            out.append((w, b))
        return out

    @property
    def n_params(self) -> int:
        return self.layer_slices()[-1][1].stop

    def output_node_indices(self, node: int) -> np.ndarray:
        """Flat indices of the incoming weights of output ``node`` followed by its bias."""
        if not 0 <= node < self.n_classes:
            raise ValueError(f"output node {node} outside [0, {self.n_classes})")
        w, b = self.layer_slices()[-1]
        fan_in = self.layer_sizes[-2]
        start = w.start + node * fan_in
        return np.r_[np.arange(start, start + fan_in), b.start + node]


class ParameterVector:
    """Immutable model parameters with flat and per-layer views."""

    __slots__ = ("arch", "flat")

    def __init__(self, arch: Architecture, flat):
        flat = np.array(flat, dtype=np.float64, copy=True).reshape(-1)
        if flat.shape[0] != arch.n_params:
            raise ValueError(f"expected {arch.n_params} parameters, got {flat.shape[0]}")
        flat.flags.writeable = False
        self.arch = arch
        self.flat = flat

    def __len__(self) -> int:
        return self.flat.shape[0]

    def __repr__(self) -> str:
        return f"ParameterVector({self.arch.layer_sizes}, n={len(self)})"

    def weights(self, layer: int) -> np.ndarray:
        w, _ = self.arch.layer_slices()[layer]
        fan_in, fan_out = self.arch.layer_sizes[layer], self.arch.layer_sizes[layer + 1]
        return self.flat[w].reshape(fan_out, fan_in)

    def biases(self, layer: int) -> np.ndarray:
        return self.flat[self.arch.layer_slices()[layer][1]]

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.weights(i), self.biases(i)) for i in range(self.arch.n_layers)]

    def replace(self, flat) -> "ParameterVector":
        return ParameterVector(self.arch, flat)

    def same_as(self, other: "ParameterVector") -> bool:
        return self.arch == other.arch and np.array_equal(self.flat, other.flat)


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    predicted_class: int


def init_params(arch: Architecture, seed) -> ParameterVector:
    """Gaussian weights with standard deviation ``1/sqrt(fan_in)``; zero biases."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(arch.n_params)
    for (w, _), fan_in in zip(arch.layer_slices(), arch.layer_sizes[:-1]):
        flat[w] = rng.standard_normal(w.stop - w.start) / np.sqrt(fan_in)
    return ParameterVector(arch, flat)


def _as_batch(params: ParameterVector, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.n_inputs:
        raise ValueError(
            f"expected {params.arch.n_inputs} features, got shape {np.shape(features)}")
    return x


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _forward_pass(params: ParameterVector, x: np.ndarray):
    activations = [x]
    layers = params.layers()
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        if i < len(layers) - 1:
            h = np.maximum(z, 0.0)
            activations.append(h)
        else:
            h = z
    return activations, _softmax(h)


def predict_proba(params: ParameterVector, features) -> np.ndarray:
    """Class probabilities for a batch of rows, shape ``(n, classes)``."""
    return _forward_pass(params, _as_batch(params, features))[1]


def forward(params: ParameterVector, features) -> Prediction:
    """Softmax output for one feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("forward expects a single feature vector")
    p = predict_proba(params, x)[0]
    return Prediction(p, int(np.argmax(p)))


def predict(params: ParameterVector, features) -> int:
    return forward(params, features).predicted_class


def predict_batch(params: ParameterVector, features) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. the lowest class on ties
    return np.argmax(predict_proba(params, features), axis=1)


def loss(params: ParameterVector, features, label: int) -> float:
    """Cross-entropy of one example: ``-log p[label]`` with a 1e-12 floor."""
    p = forward(params, features).probabilities
    if not 0 <= label < p.shape[0]:
        raise ValueError(f"label {label} outside [0, {p.shape[0]})")
    return float(-np.log(max(p[label], PROB_FLOOR)))


def mean_loss(params: ParameterVector, features, labels) -> float:
    p = predict_proba(params, features)
    y = np.asarray(labels, dtype=np.int64)
    picked = np.maximum(p[np.arange(y.shape[0]), y], PROB_FLOOR)
    return float(-np.log(picked).mean())


def gradient(params: ParameterVector, features, labels) -> np.ndarray:
    """Backprop gradient of the mean cross-entropy over a batch, as a flat vector."""
    x = _as_batch(params, features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.shape[0] != n:
        raise ValueError("features and labels differ in length")
    activations, p = _forward_pass(params, x)
    delta = p.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad = np.empty(params.arch.n_params)
    slices = params.arch.layer_slices()
    for layer in range(params.arch.n_layers - 1, -1, -1):
        w_slice, b_slice = slices[layer]
        h = activations[layer]
        grad[w_slice] = (delta.T @ h).reshape(-1)
        grad[b_slice] = delta.sum(axis=0)
        if layer:
            delta = (delta @ params.weights(layer)) * (h > 0)
    return grad


def sgd_epoch(params: ParameterVector, data: LabeledDataset | Partition,
              batch_size: int, learning_rate: float, seed) -> ParameterVector:
    """One pass over ``data`` in seeded-shuffled minibatches; returns new parameters."""
    if isinstance(data, Partition):
        data = data.data
    if int(batch_size) < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(data)
    if n == 0:
        raise ValueError("cannot train on an empty shard")
    order = np.random.default_rng(seed).permutation(n)
    theta = params.flat.copy()
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        g = gradient(ParameterVector(params.arch, theta), data.features[idx], data.labels[idx])
        theta -= learning_rate * g
    return ParameterVector(params.arch, theta)


def dump_params(params: ParameterVector, path: str | os.PathLike) -> None:
    """One value per line in flat (layer-major, row-major) order, full precision."""
    np.savetxt(path, params.flat, fmt="%.17g")


def load_params(arch: Architecture, path: str | os.PathLike) -> ParameterVector:
    return ParameterVector(arch, np.loadtxt(path, dtype=np.float64, ndmin=1))
