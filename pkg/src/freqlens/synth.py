"""Ground-truth benchmark: superposed sinusoids labeled by the frequency subset present.

Each sample is x_n = sum_{j in subset} a_j sin(2 pi k_j n / N + phi_j) + sigma * noise,
with the label encoding the subset of candidate frequencies k_star as a bit mask.
All randomness is derived per sample from (seed, sample index), so generation is
deterministic no matter how samples are batched or parallelized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataFormatError, UnsupportedDomainError

DATASET_FORMAT_VERSION = 1

# The candidate frequencies must stay below 60 bins at reference length 2560,
# scaled proportionally for other lengths.
_K_BOUND_RATIO = 60 / 2560

AMPLITUDE_RULES = ("fixed", "uniform")


@dataclass(frozen=True)
class SynthConfig:
    n: int
    k_star: tuple[int, ...]
    noise_sigma: float
    num_samples: int
    seed: int
    amplitude_rule: str = "fixed"
    subset_only: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "k_star", tuple(int(k) for k in self.k_star))
        if self.n < 2:
            raise ConfigError("signal length must be at least 2")
        bound = _K_BOUND_RATIO * self.n
        for k in self.k_star:
            if not (0 < k < bound):
                raise ConfigError(
                    f"candidate frequency {k} outside (0, {bound:.3g}) for N={self.n}"
                )
        if len(set(self.k_star)) != len(self.k_star):
            raise ConfigError("candidate frequencies must be distinct")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be positive")
        if self.amplitude_rule not in AMPLITUDE_RULES:
            raise ConfigError(f"amplitude_rule must be one of {AMPLITUDE_RULES}")
        if self.subset_only is not None and not (0 <= self.subset_only < self.num_classes):
            raise ConfigError("subset_only must be a valid label")

    @property
    def num_classes(self) -> int:
        return 2 ** len(self.k_star)


@dataclass
class Dataset:
    signals: np.ndarray
    labels: np.ndarray
    config: SynthConfig

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.signals.shape[0] != self.labels.shape[0]:
            raise ConfigError("signals and labels disagree on sample count")

    def __len__(self) -> int:
        return self.signals.shape[0]


_PRESETS = {
    "baseline": dict(n=2560, k_star=(5, 16, 32, 53), noise_sigma=0.01, num_samples=10**6),
    "noisy": dict(n=2560, k_star=(5, 16, 32, 53), noise_sigma=0.8, num_samples=10**6),
    "desk": dict(n=512, k_star=(1, 3, 6, 11), noise_sigma=0.01, num_samples=10**5),
}


def preset(name: str, seed: int = 0, **overrides) -> SynthConfig:
    """Named task configurations; keyword overrides adjust individual fields."""
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(_PRESETS)}")
    params = dict(_PRESETS[name], seed=seed)
    params.update(overrides)
    return SynthConfig(**params)


def subset_to_label(subset, k_star) -> int:
    """Encode a frequency subset as a bit mask over the k_star order (LSB first)."""
    subset = set(subset)
    unknown = subset - set(k_star)
    if unknown:
        raise ConfigError(f"frequencies {sorted(unknown)} are not in k_star {k_star}")
    return sum(1 << j for j, k in enumerate(k_star) if k in subset)


def label_to_subset(label: int, k_star) -> tuple[int, ...]:
    """Decode a label back into the ordered frequency subset it encodes."""
    if not (0 <= label < 2 ** len(k_star)):
        raise ConfigError(f"label {label} out of range for {len(k_star)} frequencies")
    return tuple(k for j, k in enumerate(k_star) if label >> j & 1)


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, index))))


def generate(cfg: SynthConfig) -> Dataset:
    """Generate the dataset for ``cfg``; bit-identical for identical configs."""
    num_k = len(cfg.k_star)
    if cfg.subset_only is not None:
        labels = np.full(cfg.num_samples, cfg.subset_only, dtype=np.int64)
    else:
        labels = np.arange(cfg.num_samples, dtype=np.int64) % cfg.num_classes

    signals = np.empty((cfg.num_samples, cfg.n))
    phases = np.empty((cfg.num_samples, num_k))
    amps = np.ones((cfg.num_samples, num_k))
    for i in range(cfg.num_samples):
        rng = _sample_rng(cfg.seed, i)
        phases[i] = rng.uniform(0.0, 2.0 * np.pi, size=num_k)
        if cfg.amplitude_rule == "uniform":
            amps[i] = rng.uniform(0.5, 1.5, size=num_k)
        signals[i] = rng.standard_normal(cfg.n)
    signals *= cfg.noise_sigma

    # sin(theta + phi) = cos(phi) sin(theta) + sin(phi) cos(theta), so the tone
    # superposition is two matmuls against fixed per-frequency tables.
    t = np.arange(cfg.n)
    theta = 2.0 * np.pi * np.outer(np.asarray(cfg.k_star), t) / cfg.n
    sin_tab, cos_tab = np.sin(theta), np.cos(theta)
    mask = (labels[:, None] >> np.arange(num_k)[None, :] & 1).astype(np.float64)
    coeff_sin = amps * mask * np.cos(phases)
    coeff_cos = amps * mask * np.sin(phases)
    chunk = max(1, 2**22 // cfg.n)
    for lo in range(0, cfg.num_samples, chunk):
        hi = min(lo + chunk, cfg.num_samples)
        signals[lo:hi] += coeff_sin[lo:hi] @ sin_tab
        signals[lo:hi] += coeff_cos[lo:hi] @ cos_tab
    return Dataset(signals=signals, labels=labels, config=cfg)


def informative_bins(subset, n: int) -> np.ndarray:
    """Frequency bins {k, (N-k) mod N} carrying the subset's tones, sorted."""
    bins = set()
    for k in subset:
        bins.add(int(k) % n)
        bins.add((n - int(k)) % n)
    return np.array(sorted(bins), dtype=np.int64)


def ground_truth_bins(label: int, cfg: SynthConfig, domain: str) -> np.ndarray:
    """Indices of the informative features for a label in the given domain.

    The signal is stationary, so in the time-frequency domain the informative
    bins are the same in every frame; the returned indices are per-frame bin
    indices there too. Time-domain ground truth is undefined.
    """
    if domain == "time":
        raise UnsupportedDomainError("no per-time-step ground truth exists for this task")
    if domain not in ("frequency", "time_frequency"):
        raise UnsupportedDomainError(f"unknown domain {domain!r}")
    return informative_bins(label_to_subset(label, cfg.k_star), cfg.n)


def save_dataset(dataset: Dataset, path):
    """Write header + one 'label,x_0,...,x_{N-1}' row per sample."""
    cfg = dataset.config
    header = (
        f"format_version={DATASET_FORMAT_VERSION},n={cfg.n},"
        f"num_samples={len(dataset)},k_star={'|'.join(str(k) for k in cfg.k_star)},"
        f"sigma={cfg.noise_sigma!r},seed={cfg.seed},amplitude_rule={cfg.amplitude_rule}"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for label, row in zip(dataset.labels, dataset.signals):
            fh.write(str(int(label)))
            fh.write(",")
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def _parse_header(line: str) -> dict:
    fields = {}
    for token in line.strip().split(","):
        if "=" not in token:
            raise DataFormatError("malformed dataset header", line=1, field=token)
        key, value = token.split("=", 1)
        fields[key] = value
    return fields


def load_dataset(path) -> Dataset:
    """Read a dataset file written by :func:`save_dataset`."""
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise DataFormatError("dataset file is empty", line=1)
        header = _parse_header(header_line)
        try:
            version = int(header["format_version"])
            if version != DATASET_FORMAT_VERSION:
                raise DataFormatError(
                    f"unsupported dataset format_version {version}", line=1
                )
            cfg = SynthConfig(
                n=int(header["n"]),
                k_star=tuple(int(k) for k in header["k_star"].split("|")),
                noise_sigma=float(header["sigma"]),
                num_samples=int(header["num_samples"]),
                seed=int(header["seed"]),
                amplitude_rule=header.get("amplitude_rule", "fixed"),
            )
        except (KeyError, ValueError, ConfigError) as exc:
            raise DataFormatError(f"bad dataset header: {exc}", line=1) from exc
        signals = np.empty((cfg.num_samples, cfg.n))
        labels = np.empty(cfg.num_samples, dtype=np.int64)
        row = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            if row >= cfg.num_samples:
                raise DataFormatError("more rows than the header declares", line=lineno)
            parts = line.split(",")
            if len(parts) != cfg.n + 1:
                raise DataFormatError(
                    f"expected {cfg.n + 1} fields, got {len(parts)}", line=lineno
                )
            try:
                labels[row] = int(parts[0])
                signals[row] = np.asarray(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"not a number: {exc}", line=lineno) from exc
            if not 0 <= labels[row] < cfg.num_classes:
                raise DataFormatError(
                    f"label {labels[row]} out of range", line=lineno, field="label"
                )
            row += 1
        if row != cfg.num_samples:
            raise DataFormatError(
                f"header declares {cfg.num_samples} samples but file has {row}"
            )
    return Dataset(signals=signals, labels=labels, config=cfg)
