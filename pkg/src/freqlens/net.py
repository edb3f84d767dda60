"""Minimal feed-forward engine: dense / 1-d conv / ReLU / flatten layers.

Float64 throughout; attribution math downstream is tolerance-sensitive.
Layers operate on batched arrays with a leading sample axis; single-sample
entry points wrap a batch of one. Forward passes are pure; training mutates
one network instance and is fully determined by the seed in its config
(parameter init and batch order).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DimensionError,
    InvalidInputError,
    ModelFormatError,
    TrainingFailureError,
    UnsupportedVersionError,
)

MODEL_FORMAT_VERSION = 1


def _check_finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")


@dataclass
class Dense:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError("dense layer needs (out, in) weights and (out,) bias")
        _check_finite("dense weights", self.weights)
        _check_finite("dense bias", self.bias)

    def out_shape(self, in_shape):
        if in_shape != (self.weights.shape[1],):
            raise DimensionError(
                f"dense layer expects input shape ({self.weights.shape[1]},), got {in_shape}"
            )
        return (self.weights.shape[0],)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.bias


@dataclass
class Conv1D:
    kernels: np.ndarray  # (c_out, c_in, k)
    bias: np.ndarray  # (c_out,)
    stride: int = 1

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernels.ndim != 3 or self.bias.shape != (self.kernels.shape[0],):
            raise DimensionError("conv1d needs (c_out, c_in, k) kernels and (c_out,) bias")
        if self.stride < 1:
            raise DimensionError("conv1d stride must be positive")
        _check_finite("conv kernels", self.kernels)
        _check_finite("conv bias", self.bias)

    def out_shape(self, in_shape):
        k = self.kernels.shape[2]
        if len(in_shape) == 1:
            if self.kernels.shape[1] != 1:
                raise DimensionError("1-d input requires a single input channel")
            length = in_shape[0]
        elif len(in_shape) == 2 and in_shape[0] == self.kernels.shape[1]:
            length = in_shape[1]
        else:
            raise DimensionError(
                f"conv1d expects {self.kernels.shape[1]} input channels, got shape {in_shape}"
            )
        if length < k:
            raise DimensionError(f"conv1d kernel {k} longer than input {length}")
        return (self.kernels.shape[0], (length - k) // self.stride + 1)

    def as_channels(self, x: np.ndarray) -> np.ndarray:
        """Batched input (B, L) or (B, C, L) -> (B, C, L)."""
        if x.ndim == 2:
            if self.kernels.shape[1] != 1:
                raise DimensionError("1-d input requires a single input channel")
            return x[:, None, :]
        return x

    def windows(self, x: np.ndarray) -> np.ndarray:
        view = np.lib.stride_tricks.sliding_window_view(x, self.kernels.shape[2], axis=-1)
        return view[:, :, :: self.stride, :]

    def forward(self, x: np.ndarray) -> np.ndarray:
        win = self.windows(self.as_channels(x))
        out = np.einsum("bctk,ock->bot", win, self.kernels, optimize=True)
        return out + self.bias[None, :, None]


@dataclass
class ReLU:
    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)


@dataclass
class Flatten:
    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[0], -1)


Layer = Dense | Conv1D | ReLU | Flatten


@dataclass
class Network:
    layers: list
    input_length: int
    num_classes: int

    def __post_init__(self):
        shape = (self.input_length,)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.out_shape(shape)
            except DimensionError as exc:
                raise DimensionError(f"layer {i}: {exc}") from exc
        if shape != (self.num_classes,):
            raise DimensionError(
                f"network output shape {shape} does not match num_classes {self.num_classes}"
            )


# Uniform fan-in-scaled init. A small scale keeps the trained weights
# dominated by learned structure instead of surviving init noise, which is
# what makes gradient-based attributions spectrally clean on easy tasks.
DEFAULT_INIT_SCALE = 0.1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    init_scale: float = DEFAULT_INIT_SCALE

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch_size, learning_rate must be positive")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be 'sgd' or 'adam'")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")


def build_mlp(
    input_length: int,
    hidden,
    num_classes: int,
    seed: int = 0,
    init_scale: float = DEFAULT_INIT_SCALE,
) -> Network:
    """Dense/ReLU stack with uniform init scaled by 1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = input_length
    for width in hidden:
        layers.append(Dense(_fan_in_uniform(rng, width, fan_in, init_scale), np.zeros(width)))
        layers.append(ReLU())
        fan_in = width
    layers.append(Dense(_fan_in_uniform(rng, num_classes, fan_in, init_scale), np.zeros(num_classes)))
    return Network(layers=layers, input_length=input_length, num_classes=num_classes)


def _fan_in_uniform(
    rng: np.random.Generator, out: int, fan_in: int, scale: float = DEFAULT_INIT_SCALE
) -> np.ndarray:
    limit = scale / math.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=(out, fan_in))


def forward_batch(net: Network, xs: np.ndarray) -> tuple[np.ndarray, list]:
    """Run a (B, N) batch through the network; returns (logits, per-layer input trace)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != net.input_length:
        raise DimensionError(f"expected batch shape (B, {net.input_length}), got {xs.shape}")
    trace = []
    a = xs
    for layer in net.layers:
        trace.append(a)
        a = layer.forward(a)
    trace.append(a)
    return a, trace


def forward(net: Network, x) -> tuple[np.ndarray, list]:
    """Single-sample forward pass; trace entries keep the leading batch axis (B=1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_length,):
        raise DimensionError(f"expected input shape ({net.input_length},), got {x.shape}")
    logits, trace = forward_batch(net, x[None, :])
    return logits[0], trace


def _grad_through(layer, a_in: np.ndarray, g_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. a layer's (batched) input given the output gradient."""
    if isinstance(layer, Dense):
        return g_out @ layer.weights
    if isinstance(layer, ReLU):
        return g_out * (a_in > 0)
    if isinstance(layer, Flatten):
        return g_out.reshape(a_in.shape)
    if isinstance(layer, Conv1D):
        x = layer.as_channels(a_in)
        g_in = np.zeros_like(x)
        t_out = g_out.shape[-1]
        for kk in range(layer.kernels.shape[2]):
            sl = slice(kk, kk + layer.stride * t_out, layer.stride)
            g_in[:, :, sl] += np.einsum(
                "bot,oc->bct", g_out, layer.kernels[:, :, kk], optimize=True
            )
        return g_in.reshape(a_in.shape)
    raise DimensionError(f"unknown layer type {type(layer).__name__}")


def backward_batch(net: Network, xs: np.ndarray, target_class: int) -> np.ndarray:
    """Exact reverse-mode gradient of the selected logit for every sample."""
    _, trace = forward_batch(net, xs)
    return gradient_from_trace(net, trace, target_class)


def backward(net: Network, x, target_class: int) -> np.ndarray:
    return backward_batch(net, np.asarray(x, dtype=np.float64)[None, :], target_class)[0]


def gradient_from_trace(net: Network, trace: list, target_class: int) -> np.ndarray:
    logits = trace[-1]
    if not (0 <= target_class < net.num_classes):
        raise ConfigError(f"class index {target_class} out of range")
    g = np.zeros_like(logits)
    g[:, target_class] = 1.0
    for layer, a_in in zip(reversed(net.layers), reversed(trace[:-1])):
        g = _grad_through(layer, a_in, g)
    return g


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(net: Network, xs: np.ndarray) -> np.ndarray:
    logits, _ = forward_batch(net, np.atleast_2d(np.asarray(xs, dtype=np.float64)))
    return softmax(logits)


def _param_layers(net: Network):
    return [l for l in net.layers if isinstance(l, (Dense, Conv1D))]


def _weights_of(layer):
    return layer.weights if isinstance(layer, Dense) else layer.kernels


def _init_params(net: Network, rng: np.random.Generator, scale: float = DEFAULT_INIT_SCALE):
    for layer in _param_layers(net):
        if isinstance(layer, Dense):
            layer.weights = _fan_in_uniform(rng, *layer.weights.shape, scale)
        else:
            c_out, c_in, k = layer.kernels.shape
            limit = scale / math.sqrt(c_in * k)
            layer.kernels = rng.uniform(-limit, limit, size=(c_out, c_in, k))
        layer.bias = np.zeros_like(layer.bias)


def _param_grads(net: Network, trace: list, delta: np.ndarray) -> list:
    """Per-parametric-layer (weight_grad, bias_grad) for a batch output grad."""
    grads = []
    g = delta
    for layer, a_in in zip(reversed(net.layers), reversed(trace[:-1])):
        if isinstance(layer, Dense):
            grads.append((g.T @ a_in, g.sum(axis=0)))
        elif isinstance(layer, Conv1D):
            win = layer.windows(layer.as_channels(a_in))
            grads.append(
                (np.einsum("bot,bctk->ock", g, win, optimize=True), g.sum(axis=(0, 2)))
            )
        g = _grad_through(layer, a_in, g)
    return list(reversed(grads))


def accuracy(net: Network, xs: np.ndarray, labels: np.ndarray, batch: int = 512) -> float:
    labels = np.asarray(labels)
    hits = 0
    for lo in range(0, xs.shape[0], batch):
        logits, _ = forward_batch(net, xs[lo : lo + batch])
        hits += int(np.sum(np.argmax(logits, axis=1) == labels[lo : lo + batch]))
    return hits / xs.shape[0]


class _Adam:
    def __init__(self, arrays, lr):
        self.lr = lr
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, arrays, grads):
        self.t += 1
        for a, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= 0.9
            m += 0.1 * g
            v *= 0.999
            v += 0.001 * g * g
            mhat = m / (1.0 - 0.9**self.t)
            vhat = v / (1.0 - 0.999**self.t)
            a -= self.lr * mhat / (np.sqrt(vhat) + 1e-8)


def train(
    net: Network,
    signals: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    test_signals: np.ndarray | None = None,
    test_labels: np.ndarray | None = None,
) -> dict:
    """Cross-entropy training; re-initializes parameters from cfg.seed.

    Returns a metrics dict with per-epoch losses and final train/test accuracy.
    """
    signals = np.asarray(signals, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if signals.shape[0] == 0:
        raise TrainingFailureError("empty dataset")
    if labels.min() < 0 or labels.max() >= net.num_classes:
        raise TrainingFailureError("labels out of range for the network head")

    rng = np.random.default_rng(cfg.seed)
    _init_params(net, rng, cfg.init_scale)
    params = _param_layers(net)
    flat = [arr for l in params for arr in (_weights_of(l), l.bias)]
    adam = _Adam(flat, cfg.learning_rate) if cfg.optimizer == "adam" else None

    epoch_losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(signals.shape[0])
        total_loss = 0.0
        for lo in range(0, signals.shape[0], cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            xb, yb = signals[idx], labels[idx]
            logits, trace = forward_batch(net, xb)
            probs = softmax(logits)
            batch_loss = -np.mean(np.log(np.maximum(probs[np.arange(len(yb)), yb], 1e-300)))
            if not np.isfinite(batch_loss):
                raise TrainingFailureError("loss diverged to non-finite values")
            total_loss += batch_loss * len(yb)
            delta = probs
            delta[np.arange(len(yb)), yb] -= 1.0
            delta /= len(yb)
            grads = _param_grads(net, trace, delta)
            flat_grads = [arr for gw, gb in grads for arr in (gw, gb)]
            if adam is not None:
                adam.step(flat, flat_grads)
            else:
                for a, g in zip(flat, flat_grads):
                    a -= cfg.learning_rate * g
        epoch_losses.append(float(total_loss / signals.shape[0]))
    metrics = {
        "epoch_losses": epoch_losses,
        "train_accuracy": accuracy(net, signals, labels),
    }
    if test_signals is not None and test_labels is not None:
        metrics["test_accuracy"] = accuracy(net, test_signals, np.asarray(test_labels))
    return metrics


def _layer_to_json(layer) -> dict:
    if isinstance(layer, Dense):
        return {
            "kind": "dense",
            "shape": list(layer.weights.shape),
            "weights": layer.weights.ravel().tolist(),
            "bias": layer.bias.tolist(),
        }
    if isinstance(layer, Conv1D):
        return {
            "kind": "conv1d",
            "shape": list(layer.kernels.shape),
            "stride": layer.stride,
            "weights": layer.kernels.ravel().tolist(),
            "bias": layer.bias.tolist(),
        }
    if isinstance(layer, ReLU):
        return {"kind": "relu"}
    if isinstance(layer, Flatten):
        return {"kind": "flatten"}
    raise ModelFormatError(f"cannot serialize layer type {type(layer).__name__}")


def _layer_from_json(obj: dict, index: int):
    try:
        kind = obj["kind"]
        if kind == "dense":
            shape = tuple(obj["shape"])
            return Dense(
                np.asarray(obj["weights"], dtype=np.float64).reshape(shape),
                np.asarray(obj["bias"], dtype=np.float64),
            )
        if kind == "conv1d":
            shape = tuple(obj["shape"])
            return Conv1D(
                np.asarray(obj["weights"], dtype=np.float64).reshape(shape),
                np.asarray(obj["bias"], dtype=np.float64),
                stride=int(obj.get("stride", 1)),
            )
        if kind == "relu":
            return ReLU()
        if kind == "flatten":
            return Flatten()
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"bad layer entry: {exc}", context=f"layer {index}") from exc
    raise ModelFormatError(f"unknown layer kind {obj.get('kind')!r}", context=f"layer {index}")


def save_network(net: Network, path):
    """Versioned JSON with row-major weight arrays; float text round-trips exactly."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "input_length": net.input_length,
        "num_classes": net.num_classes,
        "layers": [_layer_to_json(l) for l in net.layers],
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_network(path) -> Network:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not valid JSON: {exc}", context=f"line {exc.lineno}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError("missing format_version header")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"format_version {doc['format_version']} not supported "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    try:
        layers = [_layer_from_json(obj, i) for i, obj in enumerate(doc["layers"])]
        return Network(
            layers=layers,
            input_length=int(doc["input_length"]),
            num_classes=int(doc["num_classes"]),
        )
    except KeyError as exc:
        raise ModelFormatError(f"missing field {exc}") from exc
