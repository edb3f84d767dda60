"""Input attribution engines: LRP with per-layer rules, plus gradient methods.

All methods run either on a plain :class:`~freqlens.net.Network` (time-domain
maps) or on an :class:`AugmentedNetwork` whose input is the concatenated
real/imaginary coefficient vector of a virtual inverse-Fourier first layer
(frequency or time-frequency maps). Augmenting never changes the decision
function: the virtual layer composes the inverse transform with the original
network, so feeding it the transform of a signal reproduces the original
logits.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import net as nets
from . import spectral
from .errors import ConfigError, DimensionError, PropagationError
from .net import Conv1D, Dense, Flatten, Network, ReLU
from .spectral import Spectrum, WindowSpec


def sign_preserving(x: np.ndarray) -> np.ndarray:
    """Sign with sign(0) = +1, so stabilizers never vanish."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


# ---------------------------------------------------------------------------
# LRP rules


@dataclass(frozen=True)
class LrpZero:
    """Plain proportional redistribution.

    With ``absorb_bias`` (the default, matching common LRP toolchains) the
    denominator is the full pre-activation, so the bias silently absorbs its
    share of relevance; set it to False for exact input conservation, where
    the denominator sums input contributions only.
    """

    absorb_bias: bool = True
    name = "lrp_zero"


@dataclass(frozen=True)
class LrpEpsilon:
    """Stabilized rule: denominator + eps * sign(denominator).

    ``eps`` is an absolute stabilizer; when None it defaults to
    ``scale * mean(|denominator|)`` per layer.
    """

    eps: float | None = None
    scale: float = 1e-6
    absorb_bias: bool = True
    name = "lrp_epsilon"

    def __post_init__(self):
        if self.eps is not None and self.eps <= 0:
            raise ConfigError("epsilon must be positive")
        if self.scale <= 0:
            raise ConfigError("epsilon scale must be positive")

    def resolve(self, denom: np.ndarray) -> float:
        if self.eps is not None:
            return self.eps
        return self.scale * float(np.mean(np.abs(denom)))


@dataclass(frozen=True)
class LrpGamma:
    gamma: float = 0.25
    absorb_bias: bool = True
    name = "lrp_gamma"

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")


@dataclass(frozen=True)
class ZPlus:
    absorb_bias: bool = True
    name = "z_plus"


Rule = LrpZero | LrpEpsilon | LrpGamma | ZPlus


def default_rules(network: Network) -> dict[int, Rule]:
    """z+ for convolutions, epsilon for dense layers."""
    rules: dict[int, Rule] = {}
    for i, layer in enumerate(network.layers):
        if isinstance(layer, Conv1D):
            rules[i] = ZPlus()
        elif isinstance(layer, Dense):
            rules[i] = LrpEpsilon()
    return rules


def _validate_rules(network: Network, rules: dict[int, Rule]):
    for i, layer in enumerate(network.layers):
        if isinstance(layer, (Dense, Conv1D)) and i not in rules:
            raise ConfigError(f"no LRP rule assigned to parametric layer {i}")


def _rho(rule, arr: np.ndarray) -> np.ndarray:
    if isinstance(rule, ZPlus):
        return np.maximum(arr, 0.0)
    if isinstance(rule, LrpGamma):
        return arr + rule.gamma * np.maximum(arr, 0.0)
    return arr


def _stabilize(denom: np.ndarray, rule: Rule, relevance: np.ndarray) -> np.ndarray:
    if isinstance(rule, LrpEpsilon):
        return denom + rule.resolve(denom) * sign_preserving(denom)
    zero = denom == 0.0
    if isinstance(rule, ZPlus):
        # No positive contributions: that output keeps no redistributable credit.
        return np.where(zero, 1.0, denom)
    if np.any(zero & (relevance != 0.0)):
        raise PropagationError(
            "zero denominator with nonzero relevance; use the epsilon rule"
        )
    return np.where(zero, 1.0, denom)


def _lrp_layer(layer, a_in: np.ndarray, relevance: np.ndarray, rule: Rule) -> np.ndarray:
    """One propagation step R_i = a_i * sum_j w_ij * R_j / stab(z_j)."""
    if isinstance(layer, ReLU):
        return relevance
    if isinstance(layer, Flatten):
        return relevance.reshape(a_in.shape)
    if not isinstance(layer, (Dense, Conv1D)):
        raise DimensionError(f"unknown layer type {type(layer).__name__}")
    w = _rho(rule, layer.weights if isinstance(layer, Dense) else layer.kernels)
    bias = _rho(rule, layer.bias) if rule.absorb_bias else np.zeros_like(layer.bias)
    if isinstance(layer, Dense):
        denom = a_in @ w.T + bias
        s = relevance / _stabilize(denom, rule, relevance)
        if isinstance(rule, ZPlus):
            s = np.where(denom == 0.0, 0.0, s)
        return a_in * (s @ w)
    work = replace(layer, kernels=w, bias=bias)
    x = work.as_channels(a_in[None, :] if a_in.ndim == 1 else a_in[None])
    denom = work.forward(x)[0]
    s = relevance / _stabilize(denom, rule, relevance)
    if isinstance(rule, ZPlus):
        s = np.where(denom == 0.0, 0.0, s)
    redistributed = nets._grad_through(work, x, s[None])[0]
    return (x[0] * redistributed).reshape(a_in.shape)


# ---------------------------------------------------------------------------
# Relevance maps


@dataclass
class RelevanceMap:
    """Domain-tagged attribution array with provenance metadata."""

    domain: str  # "time" | "frequency" | "time_frequency"
    values: np.ndarray
    method: str
    params: dict = field(default_factory=dict)
    conservation_report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = 2 if self.domain == "time_frequency" else 1
        if self.values.ndim != expected:
            raise DimensionError(
                f"{self.domain} map must be {expected}-d, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DimensionError("relevance map contains non-finite values")

    def total(self) -> float:
        return float(self.values.sum())


def save_map_json(rmap: RelevanceMap, path):
    doc = {
        "domain": rmap.domain,
        "shape": list(rmap.values.shape),
        "values": rmap.values.ravel().tolist(),
        "method": rmap.method,
        "params": rmap.params,
        "conservation_report": rmap.conservation_report,
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_map_json(path) -> RelevanceMap:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return RelevanceMap(
        domain=doc["domain"],
        values=np.asarray(doc["values"], dtype=np.float64).reshape(doc["shape"]),
        method=doc["method"],
        params=doc.get("params", {}),
        conservation_report=doc.get("conservation_report", {}),
    )


def save_map_csv(rmap: RelevanceMap, path):
    """Flat CSV: one indexed relevance value per row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if rmap.values.ndim == 1:
            writer.writerow(["index", "relevance"])
            for i, v in enumerate(rmap.values):
                writer.writerow([i, repr(float(v))])
        else:
            writer.writerow(["frame", "bin", "relevance"])
            for m in range(rmap.values.shape[0]):
                for k in range(rmap.values.shape[1]):
                    writer.writerow([m, k, repr(float(rmap.values[m, k]))])


# ---------------------------------------------------------------------------
# Virtual inverse-Fourier input layers


class VirtualDftLayer:
    """Fixed linear map of the real-signal inverse DFT, input [Re(y); Im(y)]."""

    domain = "frequency"

    def __init__(self, n: int):
        self.n = n
        self.num_coeffs = 2 * n

    def coeff_values(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return coeffs[: self.n], coeffs[self.n :]

    def analyze(self, x) -> np.ndarray:
        spec = spectral.dft(x)
        return np.concatenate([spec.re, spec.im])

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        re, im = self.coeff_values(coeffs)
        return spectral.idft(Spectrum(re=re, im=im)).samples

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        spec = spectral.dft(g)
        return np.concatenate([spec.re, spec.im])

    def aggregate(self, raw: np.ndarray) -> np.ndarray:
        """Per-coefficient relevance R_k = R_{k,Re} + R_{k,Im}."""
        return raw[: self.n] + raw[self.n :]

    def dense_matrix(self) -> np.ndarray:
        cos_t, sin_t = spectral.fourier_tables(self.n)
        scale = 1.0 / math.sqrt(self.n)
        return np.hstack([scale * cos_t, -scale * sin_t])


class VirtualStdftLayer:
    """Fixed linear map of the WOLA inverse short-time DFT (W_n^-1 rescaled)."""

    domain = "time_frequency"

    def __init__(self, n: int, window: WindowSpec):
        self.n = n
        self.window = window
        self.weights, self.envelope = spectral.window_weights(window, n)
        spectral._check_admissible(self.envelope)
        self.num_frames = self.weights.shape[0]
        self.num_coeffs = 2 * self.num_frames * n

    def coeff_values(self, coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        half = self.num_coeffs // 2
        shape = (self.num_frames, self.n)
        return coeffs[:half].reshape(shape), coeffs[half:].reshape(shape)

    def analyze(self, x) -> np.ndarray:
        spec = spectral.stdft(x, self.window)
        return np.concatenate([spec.re.ravel(), spec.im.ravel()])

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        re, im = self.coeff_values(coeffs)
        spec = spectral.Spectrogram(
            re=re, im=im, window=self.window, original_length=self.n
        )
        return spectral.istdft_wola(spec).samples

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        # d x_n / d re_{m,k} = cos(2 pi k n / N) / (sqrt(N) W_n) for every m,
        # so the adjoint is one DFT of g / W tiled across frames.
        spec = spectral.dft(np.asarray(g) / self.envelope)
        return np.concatenate(
            [np.tile(spec.re, self.num_frames), np.tile(spec.im, self.num_frames)]
        )

    def aggregate(self, raw: np.ndarray) -> np.ndarray:
        re, im = self.coeff_values(raw)
        return re + im

    def dense_matrix(self) -> np.ndarray:
        cos_t, sin_t = spectral.fourier_tables(self.n)
        scale = 1.0 / (math.sqrt(self.n) * self.envelope)[:, None]
        re_block = scale * cos_t
        im_block = -scale * sin_t
        return np.hstack([np.tile(re_block, self.num_frames), np.tile(im_block, self.num_frames)])


VirtualLayer = VirtualDftLayer | VirtualStdftLayer


@dataclass
class AugmentedNetwork:
    """A network prefixed with a virtual inverse-Fourier input layer.

    Inputs are coefficient vectors [Re; Im]; ``analyze`` converts a
    time-domain signal into this space. The forward map factors through the
    original network, so logits agree with the base network to float
    precision on transformed inputs.
    """

    base: Network
    op: VirtualLayer

    @property
    def num_classes(self) -> int:
        return self.base.num_classes

    @property
    def input_length(self) -> int:
        return self.op.num_coeffs

    @property
    def domain(self) -> str:
        return self.op.domain

    def analyze(self, x) -> np.ndarray:
        return self.op.analyze(x)

    def to_network(self) -> Network:
        """Materialize the virtual layer as an explicit dense layer (test oracle)."""
        first = Dense(self.op.dense_matrix(), np.zeros(self.base.input_length))
        return Network(
            layers=[first] + list(self.base.layers),
            input_length=self.op.num_coeffs,
            num_classes=self.base.num_classes,
        )


def augment_with_inverse_fourier(
    network: Network, kind: str = "dft", window: WindowSpec | None = None
) -> AugmentedNetwork:
    """Prefix ``network`` with a virtual inverse DFT or inverse STDFT layer."""
    if kind == "dft":
        op: VirtualLayer = VirtualDftLayer(network.input_length)
    elif kind == "stdft":
        if window is None:
            raise ConfigError("stdft augmentation needs a WindowSpec")
        op = VirtualStdftLayer(network.input_length, window)
    else:
        raise ConfigError(f"unknown augmentation kind {kind!r}")
    return AugmentedNetwork(base=network, op=op)


def _coerce_input(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.input_length,):
        raise DimensionError(f"expected input of shape ({model.input_length},), got {x.shape}")
    return x


def model_forward(model, x) -> np.ndarray:
    """Logits for a Network (signal input) or AugmentedNetwork (coeff input)."""
    if isinstance(model, AugmentedNetwork):
        signal = model.op.synthesize(_coerce_input(model, x))
        logits, _ = nets.forward(model.base, signal)
        return logits
    logits, _ = nets.forward(model, x)
    return logits


def model_gradient(model, x, target: int) -> np.ndarray:
    """Gradient of the target logit w.r.t. the model's own input space."""
    if isinstance(model, AugmentedNetwork):
        signal = model.op.synthesize(_coerce_input(model, x))
        return model.op.adjoint(nets.backward(model.base, signal, target))
    return nets.backward(model, x, target)


def _check_target(model, target: int):
    if not (0 <= target < model.num_classes):
        raise ConfigError(f"class index {target} out of range")


# ---------------------------------------------------------------------------
# Attribution methods


def lrp(
    model,
    x,
    target: int,
    rules: dict[int, Rule] | None = None,
    virtual_rule: LrpEpsilon | None = None,
) -> RelevanceMap:
    """Layer-wise relevance propagation from the target logit to the input.

    For an AugmentedNetwork the time-domain relevances are transported
    through the virtual layer with the epsilon rule (stabilizer from
    ``virtual_rule``; default scale 1e-12 of the mean absolute signal).
    """
    _check_target(model, target)
    base = model.base if isinstance(model, AugmentedNetwork) else model
    rules = default_rules(base) if rules is None else rules
    _validate_rules(base, rules)
    x = _coerce_input(model, x)

    if isinstance(model, AugmentedNetwork):
        signal = model.op.synthesize(x)
    else:
        signal = x
    logits, trace = nets.forward(base, signal)
    relevance = np.zeros(base.num_classes)
    relevance[target] = logits[target]
    for i in reversed(range(len(base.layers))):
        a_in = trace[i][0]
        relevance = _lrp_layer(base.layers[i], a_in, relevance, rules.get(i, LrpZero()))
    report = {
        "target_logit": float(logits[target]),
        "time_total": float(relevance.sum()),
    }
    report["absolute_deficit"] = report["target_logit"] - report["time_total"]
    report["relative_deficit"] = report["absolute_deficit"] / max(
        abs(report["target_logit"]), 1e-300
    )
    params = {"target": target, "rules": {i: r.name for i, r in rules.items()}}
    if not isinstance(model, AugmentedNetwork):
        return RelevanceMap("time", relevance, "lrp", params, report)

    vrule = virtual_rule if virtual_rule is not None else LrpEpsilon(scale=1e-12)
    eps = vrule.resolve(signal)
    denom = signal + eps * sign_preserving(signal)
    quotient = np.where(denom != 0.0, relevance / np.where(denom == 0.0, 1.0, denom), 0.0)
    raw = x * model.op.adjoint(quotient)
    values = model.op.aggregate(raw)
    report["transformed_total"] = float(values.sum())
    report["transform_deficit"] = report["time_total"] - report["transformed_total"]
    params["virtual_epsilon"] = eps
    return RelevanceMap(model.domain, values, "lrp", params, report)


def _finish_gradient_map(model, raw: np.ndarray, method: str, params: dict, report: dict):
    if isinstance(model, AugmentedNetwork):
        return RelevanceMap(model.domain, model.op.aggregate(raw), method, params, report)
    return RelevanceMap("time", raw, method, params, report)


def sensitivity(model, x, target: int) -> RelevanceMap:
    """Raw gradient of the target logit w.r.t. the (possibly augmented) input."""
    _check_target(model, target)
    x = _coerce_input(model, x)
    grad = model_gradient(model, x, target)
    return _finish_gradient_map(
        model, grad, "sensitivity", {"target": target}, {"gradient_total": float(grad.sum())}
    )


def gradient_x_input(model, x, target: int) -> RelevanceMap:
    """Gradient times input in the model's own input space."""
    _check_target(model, target)
    x = _coerce_input(model, x)
    raw = model_gradient(model, x, target) * x
    return _finish_gradient_map(
        model, raw, "gxi", {"target": target}, {"attribution_total": float(raw.sum())}
    )


def integrated_gradients(model, x, target: int, steps: int = 256) -> RelevanceMap:
    """Midpoint-rule path integral from the zero baseline.

    The completeness gap |sum(attr) - (f(x) - f(0))| is recorded in the
    conservation report.
    """
    if steps < 8:
        raise ConfigError("integrated gradients needs at least 8 steps")
    _check_target(model, target)
    x = _coerce_input(model, x)
    ts = (np.arange(steps) + 0.5) / steps

    if isinstance(model, AugmentedNetwork):
        signal = model.op.synthesize(x)
        path = ts[:, None] * signal[None, :]
        # The adjoint is linear, so averaging time gradients first is exact.
        mean_grad = model.op.adjoint(_batched_time_gradient(model.base, path, target).mean(axis=0))
        raw = x * mean_grad
        f_x = model_forward(model, x)[target]
        f_0 = nets.forward(model.base, np.zeros_like(signal))[0][target]
    else:
        path = ts[:, None] * x[None, :]
        raw = x * _batched_time_gradient(model, path, target).mean(axis=0)
        f_x = model_forward(model, x)[target]
        f_0 = nets.forward(model, np.zeros_like(x))[0][target]

    gap = float(raw.sum() - (f_x - f_0))
    report = {
        "attribution_total": float(raw.sum()),
        "output_difference": float(f_x - f_0),
        "completeness_gap": gap,
        "relative_completeness_gap": gap / max(abs(f_x - f_0), 1e-300),
    }
    return _finish_gradient_map(model, raw, "ig", {"target": target, "steps": steps}, report)


def _batched_time_gradient(network: Network, xs: np.ndarray, target: int) -> np.ndarray:
    return nets.backward_batch(network, xs, target)
