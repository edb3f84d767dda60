"""Unitary DFT, windowed short-time DFT, and overlap-add inverse transforms.

Conventions used throughout:

* Both transform directions carry the unitary 1/sqrt(N) factor, so Parseval
  holds without extra scaling.
* Complex spectra are stored as separate real/imaginary arrays, never
  interleaved, because relevance propagation treats the two parts as
  separate neurons.
* A short-time frame is the window-masked *full-length* signal, transformed
  with the length-N kernel. Every frame therefore has N frequency bins on
  the same grid as the plain DFT; the window width only controls how much
  of the signal each frame sees (and with it the spectral resolution).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    ColaConditionError,
    DataFormatError,
    DimensionError,
    InvalidInputError,
    WindowAdmissibilityError,
)

WINDOW_SHAPES = ("rectangular", "half_sine", "hann")

# Above this length the O(N^2) kernel tables get large; fall back to FFT,
# which agrees with the direct path to ~1e-13.
_FFT_THRESHOLD = 1024

_COLA_TOL = 1e-9


@dataclass
class Signal:
    """Real-valued time-domain sample vector; sample_rate is metadata only."""

    samples: np.ndarray
    sample_rate: float | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate is not None and self.sample_rate <= 0:
            raise InvalidInputError("sample_rate must be positive")
        _check_samples(self.samples)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass
class Spectrum:
    """Fourier coefficients of a length-N signal, split into re/im parts."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.ndim != 1 or self.re.shape != self.im.shape:
            raise DimensionError("re and im must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.re)) and np.all(np.isfinite(self.im))):
            raise InvalidInputError("spectrum contains non-finite entries")

    def __len__(self) -> int:
        return self.re.shape[0]

    def amplitude(self) -> np.ndarray:
        return np.hypot(self.re, self.im)

    def phase(self) -> np.ndarray:
        return np.arctan2(self.im, self.re)


@dataclass(frozen=True)
class WindowSpec:
    """Window shape plus framing: width H and hop D with 0 < D <= H."""

    shape: str
    width: int
    hop: int

    def __post_init__(self):
        if self.shape not in WINDOW_SHAPES:
            raise InvalidInputError(
                f"unknown window shape {self.shape!r}; expected one of {WINDOW_SHAPES}"
            )
        if self.width < 1:
            raise InvalidInputError("window width must be a positive integer")
        if not (0 < self.hop <= self.width):
            raise InvalidInputError("hop must satisfy 0 < hop <= width")


@dataclass
class Spectrogram:
    """Per-frame spectra (M x N), the window layout, and the signal length."""

    re: np.ndarray
    im: np.ndarray
    window: WindowSpec
    original_length: int

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.ndim != 2 or self.re.shape != self.im.shape:
            raise DimensionError("re and im must be 2-d arrays of equal shape")
        if not (np.all(np.isfinite(self.re)) and np.all(np.isfinite(self.im))):
            raise InvalidInputError("spectrogram contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.re.shape[0]

    @property
    def num_bins(self) -> int:
        return self.re.shape[1]


def as_samples(signal) -> np.ndarray:
    """Coerce a Signal or array-like into a validated float64 sample vector."""
    x = signal.samples if isinstance(signal, Signal) else np.asarray(signal, dtype=np.float64)
    _check_samples(x)
    return x


def _check_samples(x: np.ndarray):
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-d sample vector, got shape {x.shape}")
    if x.shape[0] < 2:
        raise InvalidInputError("signals must contain at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("signal contains non-finite samples")


@lru_cache(maxsize=8)
def fourier_tables(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (cos, sin) tables with entry [k, j] = trig(2*pi*k*j/n)."""
    k = np.arange(n)
    angles = 2.0 * np.pi * np.outer(k, k) / n
    return np.cos(angles), np.sin(angles)


def dft(signal) -> Spectrum:
    """Unitary forward transform: y_k = sum_n x_n (cos - i sin)(2 pi k n / N) / sqrt(N)."""
    x = as_samples(signal)
    n = x.shape[0]
    if n > _FFT_THRESHOLD:
        y = np.fft.fft(x) / math.sqrt(n)
        return Spectrum(re=y.real, im=y.imag)
    cos_t, sin_t = fourier_tables(n)
    scale = 1.0 / math.sqrt(n)
    return Spectrum(re=scale * (cos_t @ x), im=-scale * (sin_t @ x))


def idft(spectrum: Spectrum) -> Signal:
    """Real-signal inverse: x_n = sum_k (re_k cos - im_k sin)(2 pi n k / N) / sqrt(N)."""
    n = len(spectrum)
    if n < 2:
        raise InvalidInputError("spectra must contain at least 2 bins")
    if n > _FFT_THRESHOLD:
        y = spectrum.re + 1j * spectrum.im
        return Signal(np.fft.ifft(y).real * math.sqrt(n))
    cos_t, sin_t = fourier_tables(n)
    scale = 1.0 / math.sqrt(n)
    return Signal(scale * (cos_t @ spectrum.re - sin_t @ spectrum.im))


def imaginary_residual(spectrum: Spectrum) -> float:
    """Max |imag part| of the full complex inverse; ~0 iff the spectrum is even-symmetric."""
    n = len(spectrum)
    if n > _FFT_THRESHOLD:
        y = spectrum.re + 1j * spectrum.im
        return float(np.max(np.abs(np.fft.ifft(y).imag))) * math.sqrt(n)
    cos_t, sin_t = fourier_tables(n)
    imag = (sin_t @ spectrum.re + cos_t @ spectrum.im) / math.sqrt(n)
    return float(np.max(np.abs(imag)))


def assert_even_symmetric(spectrum: Spectrum, tol: float = 1e-9):
    """Check the real-signal symmetry y_k = conj(y_{(N-k) mod N})."""
    n = len(spectrum)
    mirror = (-np.arange(n)) % n
    scale = max(1.0, float(np.max(spectrum.amplitude())))
    if np.max(np.abs(spectrum.re - spectrum.re[mirror])) > tol * scale or np.max(
        np.abs(spectrum.im + spectrum.im[mirror])
    ) > tol * scale:
        raise InvalidInputError("spectrum is not even-symmetric")


def window_array(shape: str, width: int) -> np.ndarray:
    """Window taps sampled at half-integer offsets, so every tap is strictly positive."""
    if shape == "rectangular":
        return np.ones(width)
    t = (np.arange(width) + 0.5) / width
    if shape == "half_sine":
        return np.sin(np.pi * t)
    if shape == "hann":
        return np.sin(np.pi * t) ** 2
    raise InvalidInputError(f"unknown window shape {shape!r}")


def frame_starts(n: int, window: WindowSpec) -> np.ndarray:
    """Frame offsets m*D for m = 0..M-1 with M = ceil((N - H)/D) + 1."""
    if window.width > n:
        raise DimensionError(
            f"window width {window.width} exceeds signal length {n}"
        )
    num = 1 + max(0, math.ceil((n - window.width) / window.hop))
    return np.arange(num) * window.hop


def window_weights(window: WindowSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Lay the shifted windows w_m(n) on the full time axis.

    Returns the M x N matrix of per-frame weights (frames that would run past
    the end of the signal are truncated, which is equivalent to zero-padding
    the signal) and the column sums W_n = sum_m w_m(n).
    """
    starts = frame_starts(n, window)
    taps = window_array(window.shape, window.width)
    mat = np.zeros((starts.shape[0], n))
    for m, start in enumerate(starts):
        stop = min(start + window.width, n)
        mat[m, start:stop] = taps[: stop - start]
    return mat, mat.sum(axis=0)


def _check_admissible(envelope: np.ndarray):
    if np.any(envelope == 0.0):
        bad = int(np.argmin(np.abs(envelope)))
        raise WindowAdmissibilityError(
            f"window layout leaves sample {bad} uncovered (sum of windows is zero)"
        )


def stdft(signal, window: WindowSpec) -> Spectrogram:
    """Short-time transform: frame m is the unitary DFT of x * w_m on the full axis."""
    x = as_samples(signal)
    n = x.shape[0]
    weights, envelope = window_weights(window, n)
    _check_admissible(envelope)
    masked = weights * x[None, :]
    if n > _FFT_THRESHOLD:
        spec = np.fft.fft(masked, axis=1) / math.sqrt(n)
        return Spectrogram(re=spec.real, im=spec.imag, window=window, original_length=n)
    cos_t, sin_t = fourier_tables(n)
    scale = 1.0 / math.sqrt(n)
    return Spectrogram(
        re=scale * (masked @ cos_t),
        im=-scale * (masked @ sin_t),
        window=window,
        original_length=n,
    )


def _frame_signals(spec: Spectrogram) -> np.ndarray:
    """Inverse-transform every frame back to its masked time-domain content."""
    n = spec.num_bins
    if n > _FFT_THRESHOLD:
        return np.fft.ifft(spec.re + 1j * spec.im, axis=1).real * math.sqrt(n)
    cos_t, sin_t = fourier_tables(n)
    return (spec.re @ cos_t - spec.im @ sin_t) / math.sqrt(n)


def _layout_for(spec: Spectrogram) -> tuple[np.ndarray, np.ndarray]:
    n = spec.original_length
    if spec.num_bins != n:
        raise DimensionError(
            f"spectrogram has {spec.num_bins} bins but original_length is {n}"
        )
    weights, envelope = window_weights(spec.window, n)
    if weights.shape[0] != spec.num_frames:
        raise DimensionError(
            f"spectrogram has {spec.num_frames} frames but the window layout implies "
            f"{weights.shape[0]}"
        )
    return weights, envelope


def istdft_wola(spec: Spectrogram) -> Signal:
    """Weighted overlap-add inverse: sum the frame contents and divide by W_n.

    Exact for every admissible window, i.e. whenever W_n != 0 for all n.
    """
    weights, envelope = _layout_for(spec)
    _check_admissible(envelope)
    return Signal(_frame_signals(spec).sum(axis=0) / envelope)


def cola_profile(window: WindowSpec) -> np.ndarray:
    """Steady-state squared-window overlap sums, one value per hop residue."""
    taps = window_array(window.shape, window.width)
    sq = taps**2
    return np.array(
        [sq[r :: window.hop].sum() for r in range(window.hop)]
    )


def istdft_cola(spec: Spectrogram) -> Signal:
    """Overlap-add inverse with synthesis windowing, no per-sample rescaling.

    Requires the squared-window overlap sum to be constant across the hop
    period (within 1e-9); rectangular windows at any hop dividing the width
    and the half-sine window at 50% overlap satisfy it, a Hann window
    without overlap does not. Partial coverage at the signal edges is
    compensated with the known squared envelope so reconstruction stays
    exact for every gated window.
    """
    weights, _ = _layout_for(spec)
    profile = cola_profile(spec.window)
    level = float(profile.max())
    if np.max(np.abs(profile - level)) > _COLA_TOL * max(1.0, level):
        raise ColaConditionError(
            "squared-window overlap sum varies across the hop period "
            f"(min {profile.min():.6g}, max {level:.6g}); use istdft_wola instead"
        )
    sq_envelope = (weights**2).sum(axis=0)
    _check_admissible(sq_envelope)
    return Signal((weights * _frame_signals(spec)).sum(axis=0) / sq_envelope)


def load_signal_csv(path, row: int = 0) -> Signal:
    """Read one signal from a CSV file with one comma-separated signal per row."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"not a number: {exc}", line=lineno) from exc
    if not rows:
        raise DataFormatError("signal file is empty")
    if row >= len(rows):
        raise DataFormatError(f"requested row {row} but file has {len(rows)} rows")
    values = rows[row]
    if len(values) == 1 and len(rows) > 1 and all(len(r) == 1 for r in rows):
        values = [r[0] for r in rows]
    try:
        return Signal(np.asarray(values))
    except InvalidInputError as exc:
        raise DataFormatError(str(exc), line=row + 1) from exc


def save_signal_csv(signal, path):
    """Write a signal as a single CSV row with full float precision."""
    x = as_samples(signal)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(np.format_float_scientific(v, precision=17) for v in x))
        fh.write("\n")
