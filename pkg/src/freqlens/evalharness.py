"""Quantitative evaluation of attribution maps.

Three instruments, all comparable across time / frequency / time-frequency
representations of the same model:

* localization: the share of positive relevance mass landing on the
  ground-truth informative bins (only defined when ground truth exists);
* feature flipping: delete (SDF) or reveal (SCF) features in relevance
  order, tracking the true-class probability, summarized by the area under
  the curve on an optionally sqrt-scaled fraction axis;
* complexity: Shannon entropy of the normalized absolute relevance mass.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attribution as attr
from . import inspection, net as nets, spectral, synth
from .attribution import RelevanceMap
from .errors import ConfigError, DimensionError, UnsupportedDomainError
from .spectral import WindowSpec

FLIP_MODES = ("SDF", "SCF")
FLIP_DOMAINS = ("time", "frequency", "time_frequency")


def localization(rmap: RelevanceMap, truth_bins) -> float:
    """Positive-relevance localization: mass on truth bins over all positive mass.

    For time-frequency maps the truth bins index the frequency axis and apply
    to every frame. Returns 0 when the map carries no positive relevance.
    """
    values = rmap.values
    if values.size == 0:
        raise DimensionError("empty relevance map")
    truth = np.asarray(truth_bins, dtype=np.int64)
    positive = np.clip(values, 0.0, None)
    total = float(positive.sum())
    if total == 0.0:
        return 0.0
    on_truth = float(positive[..., truth].sum()) if truth.size else 0.0
    return on_truth / total


def complexity(rmap: RelevanceMap) -> float:
    """Shannon entropy (nats) of |R| normalized to a distribution; 0 for all-zero maps."""
    mass = np.abs(rmap.values).ravel()
    total = mass.sum()
    if total == 0.0:
        return 0.0
    p = mass[mass > 0.0] / total
    return float(-(p * np.log(p)).sum())


@dataclass
class FlipCurve:
    mode: str
    domain: str
    fractions: np.ndarray
    probabilities: np.ndarray
    auc: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.mode not in FLIP_MODES:
            raise ConfigError(f"mode must be one of {FLIP_MODES}")
        if np.any(np.diff(self.fractions) <= 0) or self.fractions[0] != 0.0 or self.fractions[-1] != 1.0:
            raise ConfigError("fractions must increase strictly from 0 to 1")
        if np.any((self.probabilities < 0) | (self.probabilities > 1)):
            raise ConfigError("probabilities must lie in [0, 1]")


def flip_auc(curve_or_probs, fractions=None, axis_scaling: str = "sqrt") -> float:
    """Trapezoidal AUC over the (optionally sqrt-rescaled) fraction axis."""
    if isinstance(curve_or_probs, FlipCurve):
        f, p = curve_or_probs.fractions, curve_or_probs.probabilities
    else:
        p, f = np.asarray(curve_or_probs), np.asarray(fractions)
    if axis_scaling == "sqrt":
        u = np.sqrt(f)
    elif axis_scaling == "linear":
        u = f
    else:
        raise ConfigError("axis_scaling must be 'sqrt' or 'linear'")
    return float(np.trapezoid(p, u))


def save_curve_csv(curve: FlipCurve, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "probability"])
        for f, p in zip(curve.fractions, curve.probabilities):
            writer.writerow([repr(float(f)), repr(float(p))])


def _pair_scores(values_last_axis: np.ndarray) -> np.ndarray:
    """Score per folded bin k in [0, N/2]: the bin plus its mirror."""
    n = values_last_axis.shape[-1]
    half = n // 2
    scores = values_last_axis[..., : half + 1].copy()
    scores[..., 1 : (n + 1) // 2] += values_last_axis[..., n - 1 : half : -1]
    return scores


def _flip_order(scores: np.ndarray) -> np.ndarray:
    """Descending score, ties broken by ascending feature index."""
    flat = scores.ravel()
    return np.lexsort((np.arange(flat.size), -flat))


def _fraction_grid(num_features: int, points: int) -> np.ndarray:
    """Log-dense feature counts from 0 to all features, endpoints included."""
    if num_features < 1:
        raise ConfigError("need at least one flippable feature")
    dense = np.geomspace(1, num_features, points - 1)
    counts = np.unique(np.concatenate([[0], np.rint(dense)])).astype(np.int64)
    return counts


def _zero_pairs_mask(order: np.ndarray, counts: np.ndarray, folded: int, n: int) -> np.ndarray:
    """(G, N) masks: True where the coefficient survives after c flips."""
    masks = np.ones((counts.size, n), dtype=bool)
    killed = np.zeros(n, dtype=bool)
    prev = 0
    for gi, c in enumerate(counts):
        for k in order[prev:c]:
            killed[k] = True
            killed[(n - k) % n] = True
        prev = c
        masks[gi] = ~killed
    return masks


def feature_flip(
    network: nets.Network,
    signal,
    label: int,
    ordering_map: RelevanceMap,
    mode: str,
    domain: str,
    window: WindowSpec | None = None,
    grid_points: int = 50,
) -> FlipCurve:
    """Flip features to a zero baseline in relevance order and track p(true class).

    SDF removes the most relevant features first; SCF starts from an empty
    input and adds them back first. Frequency and time-frequency features are
    folded coefficient pairs: a bin and its mirror are always zeroed jointly,
    so reconstructed signals stay real. The fraction axis counts flipped
    features against all features of the domain (N time points, N/2+1 folded
    bins, frames x (N/2+1) folded cells).
    """
    if mode not in FLIP_MODES:
        raise ConfigError(f"mode must be one of {FLIP_MODES}")
    if domain not in FLIP_DOMAINS:
        raise UnsupportedDomainError(f"cannot flip in domain {domain!r}")
    x = spectral.as_samples(signal)
    n = x.shape[0]
    meta: dict = {}

    if domain == "time":
        scores = ordering_map.values
        if scores.shape != (n,):
            raise DimensionError("time-domain ordering map must match the signal length")
        order = _flip_order(scores)
        counts = _fraction_grid(n, grid_points)
        keep = np.ones((counts.size, n), dtype=bool)
        for gi, c in enumerate(counts):
            keep[gi, order[:c]] = False
        batch = np.where(keep, x[None, :], 0.0)
        if mode == "SCF":
            batch = np.where(keep, 0.0, x[None, :])
        fractions = counts / n
    elif domain == "frequency":
        spec = spectral.dft(x)
        half = n // 2
        folded = half + 1
        values = ordering_map.values
        if values.shape == (n,):
            scores = _pair_scores(values)
        elif values.shape == (folded,):
            scores = values
        else:
            raise DimensionError("frequency ordering map has the wrong length")
        order = _flip_order(scores)
        counts = _fraction_grid(folded, grid_points)
        keep = _zero_pairs_mask(order, counts, folded, n)
        if mode == "SCF":
            keep = ~keep
        re = np.where(keep, spec.re[None, :], 0.0)
        im = np.where(keep, spec.im[None, :], 0.0)
        batch = _batch_idft(re, im)
        meta["max_imag_residual"] = _batch_imag_residual(re, im)
        fractions = counts / folded
    else:
        if window is None:
            raise ConfigError("time-frequency flipping needs a WindowSpec")
        spec = spectral.stdft(x, window)
        frames = spec.num_frames
        half = n // 2
        folded = half + 1
        values = ordering_map.values
        if values.shape == (frames, n):
            scores = _pair_scores(values)
        elif values.shape == (frames, folded):
            scores = values
        else:
            raise DimensionError("time-frequency ordering map has the wrong shape")
        order = _flip_order(scores)
        counts = _fraction_grid(frames * folded, grid_points)
        keep = np.ones((counts.size, frames, n), dtype=bool)
        killed = np.zeros((frames, n), dtype=bool)
        prev = 0
        for gi, c in enumerate(counts):
            for flat in order[prev:c]:
                m, k = divmod(int(flat), folded)
                killed[m, k] = True
                killed[m, (n - k) % n] = True
            prev = c
            keep[gi] = ~killed
        if mode == "SCF":
            keep = ~keep
        weights, envelope = spectral.window_weights(window, n)
        spectral._check_admissible(envelope)
        batch = np.empty((counts.size, n))
        residual = 0.0
        for gi in range(counts.size):
            re = np.where(keep[gi], spec.re, 0.0)
            im = np.where(keep[gi], spec.im, 0.0)
            frames_time = _batch_idft(re, im)
            residual = max(residual, _batch_imag_residual(re, im))
            batch[gi] = frames_time.sum(axis=0) / envelope
        meta["max_imag_residual"] = residual
        fractions = counts / (frames * folded)

    probs = nets.predict_proba(network, batch)[:, label]
    curve = FlipCurve(mode=mode, domain=domain, fractions=fractions, probabilities=probs, meta=meta)
    curve.auc = flip_auc(curve)
    return curve


def _batch_idft(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    n = re.shape[-1]
    if n > spectral._FFT_THRESHOLD:
        return np.fft.ifft(re + 1j * im, axis=-1).real * math.sqrt(n)
    cos_t, sin_t = spectral.fourier_tables(n)
    return (re @ cos_t - im @ sin_t) / math.sqrt(n)


def _batch_imag_residual(re: np.ndarray, im: np.ndarray) -> float:
    n = re.shape[-1]
    if n > spectral._FFT_THRESHOLD:
        return float(np.max(np.abs(np.fft.ifft(re + 1j * im, axis=-1).imag))) * math.sqrt(n)
    cos_t, sin_t = spectral.fourier_tables(n)
    return float(np.max(np.abs((re @ sin_t + im @ cos_t) / math.sqrt(n))))


# ---------------------------------------------------------------------------
# Benchmark orchestration

METHODS = ("lrp", "ig", "gxi", "sensitivity")


@dataclass(frozen=True)
class BenchmarkConfig:
    methods: tuple = METHODS
    domains: tuple = ("frequency",)
    stdft_widths: tuple = ()
    num_samples: int = 500
    ig_steps: int = 256
    include_flipping: bool = False
    flip_domains: tuple = ("frequency",)
    flip_samples: int = 100
    flip_grid_points: int = 50
    include_random_flip_baseline: bool = True
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("need at least one attribution method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        for d in self.domains:
            if d not in FLIP_DOMAINS:
                raise ConfigError(f"unknown domain {d!r}")
        if "time_frequency" in self.domains and not self.stdft_widths:
            raise ConfigError("time_frequency domain needs stdft_widths")
        if self.num_samples < 1 or self.flip_samples < 0:
            raise ConfigError("sample counts must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")


@dataclass
class EvalReport:
    localization: dict
    complexity: dict
    flipping: dict
    meta: dict

    def to_json(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "localization": self.localization,
                    "complexity": self.complexity,
                    "flipping": self.flipping,
                    "meta": self.meta,
                },
                fh,
                indent=2,
            )
        os.replace(tmp, path)

    def save_csv_tables(self, prefix):
        """Two tables: localization (rows=domains, cols=methods) and flip/complexity."""
        methods = sorted(self.localization)
        domains = sorted({d for m in self.localization.values() for d in m})
        with open(f"{prefix}_localization.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["domain"] + methods)
            for dom in domains:
                row = [dom]
                for m in methods:
                    cell = self.localization.get(m, {}).get(dom)
                    row.append("" if cell is None else f"{cell['mean']:.4f}")
                writer.writerow(row)
        with open(f"{prefix}_flipping.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "domain", "scf_auc", "sdf_auc", "complexity"])
            names = sorted(set(self.flipping) | set(self.complexity))
            for m in names:
                doms = sorted(set(self.flipping.get(m, {})) | set(self.complexity.get(m, {})))
                for dom in doms:
                    flip = self.flipping.get(m, {}).get(dom, {})
                    comp = self.complexity.get(m, {}).get(dom)
                    writer.writerow(
                        [
                            m,
                            dom,
                            "" if "scf_auc" not in flip else f"{flip['scf_auc']:.4f}",
                            "" if "sdf_auc" not in flip else f"{flip['sdf_auc']:.4f}",
                            "" if comp is None else f"{comp['mean']:.4f}",
                        ]
                    )


def _stdft_window(width: int) -> WindowSpec:
    return WindowSpec("rectangular", width, width)


def _domain_label(domain: str, width: int | None = None) -> str:
    return f"stdft:{width}" if domain == "time_frequency" else domain


def compute_map(
    model_bundle: dict, method: str, x: np.ndarray, target: int, ig_steps: int = 256
) -> RelevanceMap:
    """One attribution map for a (method, domain) pair on a shared model bundle.

    ``model_bundle`` is {"network": Network, "aug": AugmentedNetwork | None}.
    LRP always runs on the raw network in time domain and is transported with
    the closed forms; gradient methods run on the augmented network directly.
    """
    network = model_bundle["network"]
    aug = model_bundle.get("aug")
    if method == "lrp":
        time_map = attr.lrp(network, x, target)
        if aug is None:
            return time_map
        if aug.domain == "frequency":
            return inspection.dft_lrp(time_map.values, x)
        return inspection.stdft_lrp(time_map.values, x, window=aug.op.window)
    if aug is None:
        model, inp = network, x
    else:
        model, inp = aug, aug.analyze(x)
    if method == "sensitivity":
        return attr.sensitivity(model, inp, target)
    if method == "gxi":
        return attr.gradient_x_input(model, inp, target)
    if method == "ig":
        return attr.integrated_gradients(model, inp, target, steps=ig_steps)
    raise ConfigError(f"unknown method {method!r}")


def run_benchmark(
    network: nets.Network, dataset: synth.Dataset, cfg: BenchmarkConfig
) -> EvalReport:
    """Aggregate localization, complexity, and flipping over a test split."""
    take = min(cfg.num_samples, len(dataset))
    signals = dataset.signals[:take]
    labels = dataset.labels[:take]
    scfg = dataset.config
    n = scfg.n

    bundles = {"time": {"network": network, "aug": None}}
    if "frequency" in cfg.domains or (cfg.include_flipping and "frequency" in cfg.flip_domains):
        bundles["frequency"] = {
            "network": network,
            "aug": attr.augment_with_inverse_fourier(network, "dft"),
        }
    for width in cfg.stdft_widths:
        bundles[_domain_label("time_frequency", width)] = {
            "network": network,
            "aug": attr.augment_with_inverse_fourier(
                network, "stdft", window=_stdft_window(width)
            ),
        }

    lambda_acc: dict = {m: {} for m in cfg.methods}
    complexity_acc: dict = {m: {} for m in cfg.methods}

    def eval_sample(i: int) -> dict:
        x, label = signals[i], int(labels[i])
        subset = synth.label_to_subset(label, scfg.k_star)
        truth = synth.informative_bins(subset, n)
        out: dict = {"lambda": {}, "complexity": {}}
        for method in cfg.methods:
            for dom in cfg.domains:
                widths = cfg.stdft_widths if dom == "time_frequency" else (None,)
                for width in widths:
                    dl = _domain_label(dom, width)
                    rmap = compute_map(bundles[dl], method, x, label, cfg.ig_steps)
                    out["complexity"].setdefault(method, {})[dl] = complexity(rmap)
                    if dom != "time" and subset:
                        out["lambda"].setdefault(method, {})[dl] = localization(rmap, truth)
        return out

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(eval_sample, range(take)))
    else:
        results = [eval_sample(i) for i in range(take)]

    for out in results:
        for method, by_dom in out["lambda"].items():
            for dom, lam in by_dom.items():
                lambda_acc[method].setdefault(dom, []).append(lam)
        for method, by_dom in out["complexity"].items():
            for dom, ent in by_dom.items():
                complexity_acc[method].setdefault(dom, []).append(ent)

    flipping: dict = {}
    if cfg.include_flipping:
        flipping = _run_flipping(network, bundles, signals, labels, scfg, cfg)

    def stats(acc):
        table = {}
        for method, by_dom in acc.items():
            table[method] = {}
            for dom, values in by_dom.items():
                arr = np.asarray(values)
                table[method][dom] = {
                    "mean": float(arr.mean()),
                    "stderr": float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0,
                    "n": int(arr.size),
                }
        return table

    meta = {
        "num_samples": take,
        "methods": list(cfg.methods),
        "domains": list(cfg.domains),
        "stdft_widths": list(cfg.stdft_widths),
        "ig_steps": cfg.ig_steps,
        "seed": cfg.seed,
        "num_classes": scfg.num_classes,
        "chance_level": 1.0 / scfg.num_classes,
    }
    return EvalReport(
        localization=stats(lambda_acc),
        complexity=stats(complexity_acc),
        flipping=flipping,
        meta=meta,
    )


def _run_flipping(network, bundles, signals, labels, scfg, cfg: BenchmarkConfig) -> dict:
    # The all-zero baseline IS the empty-subset class of this task, so
    # destroying features cannot reduce that class's probability; flip
    # statistics aggregate over samples that have features to destroy.
    candidates = [
        i
        for i in range(signals.shape[0])
        if synth.label_to_subset(int(labels[i]), scfg.k_star)
    ]
    take = candidates[: min(cfg.flip_samples, len(candidates))]
    names = list(cfg.methods) + (["random"] if cfg.include_random_flip_baseline else [])

    def flip_sample(i: int) -> dict:
        x, label = signals[i], int(labels[i])
        out: dict = {}
        for dom in cfg.flip_domains:
            widths = cfg.stdft_widths if dom == "time_frequency" else (None,)
            for width in widths:
                dl = _domain_label(dom, width)
                window = _stdft_window(width) if width is not None else None
                for name in names:
                    if name == "random":
                        rng = np.random.Generator(
                            np.random.PCG64(np.random.SeedSequence((cfg.seed, 0xF11, i)))
                        )
                        shape = _ordering_shape(dom, bundles, dl, x)
                        rmap = RelevanceMap(dom, rng.standard_normal(shape), "random")
                    else:
                        rmap = compute_map(bundles[dl], name, x, label, cfg.ig_steps)
                    curves = {}
                    for mode in FLIP_MODES:
                        curve = feature_flip(
                            network, x, label, rmap, mode, dom,
                            window=window, grid_points=cfg.flip_grid_points,
                        )
                        curves[mode] = curve
                    out.setdefault(name, {})[dl] = curves
        return out

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(flip_sample, take))
    else:
        results = [flip_sample(i) for i in take]

    table: dict = {}
    for name in names:
        table[name] = {}
        domains = results[0][name].keys() if results else []
        for dl in domains:
            frac = results[0][name][dl]["SDF"].fractions
            sdf = np.mean([r[name][dl]["SDF"].probabilities for r in results], axis=0)
            scf = np.mean([r[name][dl]["SCF"].probabilities for r in results], axis=0)
            table[name][dl] = {
                "fractions": frac.tolist(),
                "sdf_curve": sdf.tolist(),
                "scf_curve": scf.tolist(),
                "sdf_auc": flip_auc(sdf, frac),
                "scf_auc": flip_auc(scf, frac),
                "n": len(results),
            }
    return table


def _ordering_shape(domain: str, bundles: dict, label: str, x: np.ndarray):
    if domain == "time":
        return x.shape
    if domain == "frequency":
        return x.shape
    aug = bundles[label]["aug"]
    return (aug.op.num_frames, x.shape[0])
