"""A small ReLU multi-layer perceptron with analytic gradients and an SGD trainer."""
from __future__ import annotations

import dataclasses
import math
from typing import Any, Sequence

import numpy as np

from mia_audit.data import Dataset
from mia_audit.errors import ConfigError, LabelError, ShapeError, TrainingError

PROB_CLAMP = 1e-12


@dataclasses.dataclass(frozen=True)
class Architecture:
    layer_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ConfigError(f"invalid layer widths {self.layer_widths!r}")
        object.__setattr__(self, "layer_widths", widths)

    @classmethod
    def one_hidden(cls, n_features: int, n_classes: int, hidden: int | None = None) -> Architecture:
        """Single hidden layer; width defaults to twice the input dimension."""
        return cls((n_features, hidden or 2 * n_features, n_classes))

    @property
    def n_parameters(self) -> int:
        w = self.layer_widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


@dataclasses.dataclass(frozen=True)
class Model:
    """MLP parameters. ``weights[i]`` has shape ``(fan_in, fan_out)``."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise ShapeError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and ws[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: fan-in {w.shape[0]} != previous fan-out {ws[i - 1].shape[1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ShapeError(f"layer {i}: non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def architecture(self) -> Architecture:
        return Architecture((self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights))

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def flat_parameters(self) -> np.ndarray:
        """Layer-major concatenation: W0 (row-major), b0, W1, b1, ..."""
        return np.concatenate([p.ravel() for w, b in zip(self.weights, self.biases) for p in (w, b)])

    def with_flat_parameters(self, theta: np.ndarray) -> Model:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.architecture.n_parameters,):
            raise ShapeError(f"expected {self.architecture.n_parameters} parameters, got {theta.shape}")
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(theta[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(theta[pos:pos + b.size])
            pos += b.size
        return Model(tuple(ws), tuple(bs))

    def to_dict(self) -> dict[str, Any]:
        return {
            "layer_widths": list(self.architecture.layer_widths),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Model:
        model = cls(tuple(np.asarray(w, dtype=np.float64) for w in d["weights"]),
                    tuple(np.asarray(b, dtype=np.float64) for b in d["biases"]))
        if list(model.architecture.layer_widths) != list(d["layer_widths"]):
            raise ShapeError("serialized layer widths do not match parameter shapes")
        return model

    def equals(self, other: Model) -> bool:
        return (self.architecture == other.architecture
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 0.1
    nesterov_momentum: float = 0.9
    weight_decay: float = 1e-4
    cosine_schedule: bool = True
    seed: int = 0

    def validate(self) -> None:
        if not isinstance(self.epochs, (int, np.integer)) or self.epochs < 0:
            raise ConfigError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not isinstance(self.batch_size, (int, np.integer)) or self.batch_size <= 0:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.nesterov_momentum < 1:
            raise ConfigError("nesterov_momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise ConfigError("weight_decay must be non-negative")


def init_mlp(arch: Architecture, seed: int) -> Model:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(arch.layer_widths[:-1], arch.layer_widths[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Model(tuple(ws), tuple(bs))


def _as_batch(model: Model, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != model.weights[0].shape[0]:
        raise ShapeError(f"input of shape {x.shape} does not match {model.weights[0].shape[0]} features")
    return x2, single


def _forward_cache(model: Model, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Return per-layer inputs and the logits for a batch."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if i == last:
            return acts, z
        h = np.maximum(z, 0.0)
        acts.append(h)
    raise AssertionError("unreachable")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(model: Model, x) -> np.ndarray:
    x2, single = _as_batch(model, x)
    z = _forward_cache(model, x2)[1]
    return z[0] if single else z


def forward(model: Model, x) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of rows."""
    x2, single = _as_batch(model, x)
    p = softmax(_forward_cache(model, x2)[1])
    return p[0] if single else p


def _check_labels(model: Model, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= model.n_classes):
        raise LabelError(f"label outside [0, {model.n_classes})")
    return y


def per_example_loss(model: Model, x, y):
    """Cross-entropy with probabilities clamped to ``[1e-12, 1]``."""
    x2, single = _as_batch(model, x)
    y = np.atleast_1d(_check_labels(model, y))
    p = softmax(_forward_cache(model, x2)[1])
    loss = -np.log(np.clip(p[np.arange(len(p)), y], PROB_CLAMP, 1.0))
    return float(loss[0]) if single else loss


def _backward(model: Model, x: np.ndarray, y: np.ndarray):
    """Per-layer inputs, per-example deltas (d loss / d pre-activation) and probabilities."""
    acts, z = _forward_cache(model, x)
    probs = softmax(z)
    delta = probs.copy()
    delta[np.arange(len(y)), y] -= 1.0
    deltas = [delta]
    for i in range(len(model.weights) - 1, 0, -1):
        delta = (delta @ model.weights[i].T) * (acts[i] > 0)
        deltas.append(delta)
    deltas.reverse()
    return acts, deltas, probs


def per_example_gradient(model: Model, x, y: int) -> np.ndarray:
    """Gradient of the loss w.r.t. all parameters, flattened like :meth:`Model.flat_parameters`."""
    x2, single = _as_batch(model, x)
    if not single:
        raise ShapeError("per_example_gradient takes a single sample")
    y = np.atleast_1d(_check_labels(model, y))
    acts, deltas, _ = _backward(model, x2, y)
    return np.concatenate([p.ravel() for a, d in zip(acts, deltas) for p in (np.outer(a[0], d[0]), d[0])])


def per_example_grad_norm(model: Model, x, y):
    """L2 norm of the full parameter gradient, for one sample or a batch.

    Uses ``||a d^T||_F = ||a|| ||d||`` so the batch case never materializes
    per-example gradients.
    """
    x2, single = _as_batch(model, x)
    y = np.atleast_1d(_check_labels(model, y))
    acts, deltas, _ = _backward(model, x2, y)
    sq = np.zeros(len(y))
    for a, d in zip(acts, deltas):
        sq += ((a * a).sum(axis=1) + 1.0) * (d * d).sum(axis=1)
    norms = np.sqrt(sq)
    return float(norms[0]) if single else norms


def predict(model: Model, x) -> np.ndarray:
    """Argmax class; ties go to the smallest index."""
    return np.argmax(np.atleast_2d(forward(model, x)), axis=1)


def accuracy(model: Model, data: Dataset, idx) -> float:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("accuracy needs at least one index")
    return float(np.mean(predict(model, data.features[idx]) == data.labels[idx]))


def _batch_gradients(model: Model, x: np.ndarray, y: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    acts, deltas, p = _backward(model, x, y)
    n = len(y)
    gw = [a.T @ d / n for a, d in zip(acts, deltas)]
    gb = [d.sum(axis=0) / n for d in deltas]
    loss = float(np.mean(-np.log(np.clip(p[np.arange(n), y], PROB_CLAMP, 1.0))))
    return gw, gb, loss


def train(model: Model, data: Dataset, idx: Sequence[int], cfg: TrainConfig) -> Model:
    """Mini-batch SGD with Nesterov momentum, L2 weight decay and cosine annealing.

    Update per step: ``v = mu*v - lr*g``; ``theta += mu*v - lr*g``.
    The input model is left untouched.
    """
    cfg.validate()
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise TrainingError("empty training index list")
    if data.n_features != model.weights[0].shape[0] or data.n_classes != model.n_classes:
        raise ShapeError("model architecture does not match the dataset")
    if cfg.epochs == 0:
        return model

    params = [np.array(p) for w, b in zip(model.weights, model.biases) for p in (w, b)]
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(idx.size / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    n_layers = len(model.weights)
    current = _unchecked_model(params, n_layers)

    with np.errstate(over="ignore", invalid="ignore"):
        _sgd_loop(cfg, data, idx, params, velocity, rng, current, total)
    return Model(tuple(params[0::2]), tuple(params[1::2]))


def _sgd_loop(cfg, data, idx, params, velocity, rng, current, total) -> None:
    # divergence is detected explicitly below, so overflow warnings are silenced by the caller
    mu, step = cfg.nesterov_momentum, 0
    for epoch in range(cfg.epochs):
        order = idx[rng.permutation(idx.size)]
        for start in range(0, idx.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            gw, gb, loss = _batch_gradients(current, data.features[batch], data.labels[batch])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}", epoch=epoch, step=step)
            lr = cfg.learning_rate
            if cfg.cosine_schedule:
                lr *= 0.5 * (1.0 + math.cos(math.pi * step / total))
            grads = [g for pair in zip(gw, gb) for g in pair]
            for p, v, g in zip(params, velocity, grads):
                if cfg.weight_decay:
                    g = g + cfg.weight_decay * p
                v *= mu
                v -= lr * g
                p += mu * v - lr * g
            if not all(np.all(np.isfinite(p)) for p in params):
                raise TrainingError(f"non-finite parameters at epoch {epoch}, step {step}", epoch=epoch, step=step)
            step += 1


def _unchecked_model(params: list[np.ndarray], n_layers: int) -> Model:
    # skips validation and copying inside the hot loop; params are only read
    m = object.__new__(Model)
    object.__setattr__(m, "weights", tuple(params[0:2 * n_layers:2]))
    object.__setattr__(m, "biases", tuple(params[1:2 * n_layers:2]))
    return m
