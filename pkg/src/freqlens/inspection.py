"""Closed-form transport of time-domain relevances into spectral domains.

Given relevances of the multiplicative form R_n = x_n * c_n (the shape
produced by the 0/epsilon/gamma LRP rules), the transport through a virtual
inverse-Fourier layer has a closed form: with c = R / x (guarded division,
0/0 = 0) and the unitary transform of c,

    R_{k,Re} = Re(y_k) * Re(dft(c))_k
    R_{k,Im} = Im(y_k) * Im(dft(c))_k
    R_k      = R_{k,Re} + R_{k,Im}

and for the short-time variant the same expression per frame with c / W in
place of c, where W_n is the summed window envelope. Because every frame of
the short-time transform lives on the full-length frequency grid, one extra
DFT covers all frames.

Total relevance is conserved exactly (up to the epsilon guard): the inner
sums contract against the inverse transform back to x_n, cancelling the
quotient. For a rectangular window with hop equal to width, the per-frame
sums additionally match the per-segment time-domain sums.
"""

from __future__ import annotations

import numpy as np

from . import spectral
from .attribution import RelevanceMap, sign_preserving
from .errors import DimensionError, StaleSpectrumError, SymmetryError
from .spectral import Spectrogram, Spectrum, WindowSpec

DEFAULT_EPS_SCALE = 1e-12

_STALE_TOL = 1e-9


def _guarded_quotient(relevance: np.ndarray, x: np.ndarray, eps_div: float | None):
    """c_n = R_n / (x_n + eps * sign(x_n)), with 0/0 defined as 0."""
    if eps_div is None:
        eps_div = DEFAULT_EPS_SCALE * float(np.mean(np.abs(x)))
    denom = x + eps_div * sign_preserving(x)
    safe = np.where(denom == 0.0, 1.0, denom)
    return np.where(denom != 0.0, relevance / safe, 0.0), eps_div


def _check_pair(relevance, signal) -> tuple[np.ndarray, np.ndarray]:
    x = spectral.as_samples(signal)
    r = np.asarray(relevance, dtype=np.float64)
    if r.shape != x.shape:
        raise DimensionError(
            f"relevance shape {r.shape} does not match signal shape {x.shape}"
        )
    if not np.all(np.isfinite(r)):
        raise DimensionError("relevance contains non-finite values")
    return r, x


def _conservation(time_total: float, domain_total: float) -> dict:
    deficit = time_total - domain_total
    return {
        "time_total": time_total,
        "transformed_total": domain_total,
        "absolute_deficit": deficit,
        "relative_deficit": deficit / max(abs(time_total), 1e-300),
    }


def dft_lrp(
    relevance,
    signal,
    spectrum: Spectrum | None = None,
    eps_div: float | None = None,
    spectrum_verified: bool = False,
) -> RelevanceMap:
    """Transport time-domain relevances onto frequency bins.

    A caller-supplied spectrum is revalidated against dft(signal) unless
    ``spectrum_verified`` is set; a mismatch raises StaleSpectrumError.
    """
    r, x = _check_pair(relevance, signal)
    fresh = spectral.dft(x) if (spectrum is None or not spectrum_verified) else None
    if spectrum is None:
        spectrum = fresh
    elif not spectrum_verified:
        if len(spectrum) != x.shape[0]:
            raise DimensionError("spectrum length does not match the signal")
        scale = max(1.0, float(np.max(fresh.amplitude())))
        if (
            np.max(np.abs(spectrum.re - fresh.re)) > _STALE_TOL * scale
            or np.max(np.abs(spectrum.im - fresh.im)) > _STALE_TOL * scale
        ):
            raise StaleSpectrumError("supplied spectrum does not match dft(signal)")
    c, eps = _guarded_quotient(r, x, eps_div)
    c_hat = spectral.dft(c)
    values = spectrum.re * c_hat.re + spectrum.im * c_hat.im
    return RelevanceMap(
        domain="frequency",
        values=values,
        method="dft_lrp",
        params={"eps_div": eps},
        conservation_report=_conservation(float(r.sum()), float(values.sum())),
    )


def stdft_lrp(
    relevance,
    signal,
    window: WindowSpec | None = None,
    spectrogram: Spectrogram | None = None,
    eps_div: float | None = None,
    spectrogram_verified: bool = False,
) -> RelevanceMap:
    """Transport time-domain relevances onto the time-frequency grid."""
    r, x = _check_pair(relevance, signal)
    if window is None:
        if spectrogram is None:
            raise DimensionError("need a window spec or a spectrogram")
        window = spectrogram.window
    fresh = spectral.stdft(x, window)
    if spectrogram is None:
        spectrogram = fresh
    elif not spectrogram_verified:
        if spectrogram.re.shape != fresh.re.shape or spectrogram.window != window:
            raise DimensionError("spectrogram layout does not match the signal/window")
        scale = max(1.0, float(np.max(np.hypot(fresh.re, fresh.im))))
        if (
            np.max(np.abs(spectrogram.re - fresh.re)) > _STALE_TOL * scale
            or np.max(np.abs(spectrogram.im - fresh.im)) > _STALE_TOL * scale
        ):
            raise StaleSpectrumError("supplied spectrogram does not match stdft(signal)")
    _, envelope = spectral.window_weights(window, x.shape[0])
    spectral._check_admissible(envelope)
    c, eps = _guarded_quotient(r, x, eps_div)
    c_hat = spectral.dft(c / envelope)
    values = spectrogram.re * c_hat.re[None, :] + spectrogram.im * c_hat.im[None, :]
    return RelevanceMap(
        domain="time_frequency",
        values=values,
        method="stdft_lrp",
        params={
            "eps_div": eps,
            "window": window.shape,
            "width": window.width,
            "hop": window.hop,
        },
        conservation_report=_conservation(float(r.sum()), float(values.sum())),
    )


def fold_symmetric(rmap: RelevanceMap, tol: float = 1e-8) -> RelevanceMap:
    """Merge mirrored bins of an even-symmetric map onto k in [0, N/2].

    Bins 0 < k < N/2 absorb their mirror (sum); the symmetry
    R_k = R_{(N-k) mod N} is asserted first and a violation raises
    SymmetryError, which signals an upstream bug.
    """
    if rmap.domain not in ("frequency", "time_frequency"):
        raise DimensionError(f"cannot fold a {rmap.domain} map")
    values = rmap.values
    n = values.shape[-1]
    mirror = (-np.arange(n)) % n
    scale = max(1.0, float(np.max(np.abs(values))))
    if np.max(np.abs(values - values[..., mirror])) > tol * scale:
        raise SymmetryError("map is not even-symmetric; upstream transport is broken")
    half = n // 2
    folded = values[..., : half + 1].copy()
    folded[..., 1 : (n + 1) // 2] += values[..., n - 1 : half : -1]
    params = dict(rmap.params, folded=True, full_bins=n)
    return RelevanceMap(rmap.domain, folded, rmap.method, params, dict(rmap.conservation_report))


def save_heatmap_svg(rmap: RelevanceMap, path, cell: int = 6):
    """Render a time-frequency map as an SVG grid, diverging scale centered at 0."""
    if rmap.values.ndim != 2:
        raise DimensionError("SVG heatmaps are defined for time-frequency maps")
    values = rmap.values
    frames, bins = values.shape
    vmax = float(np.max(np.abs(values))) or 1.0
    margin = 20
    width = margin * 2 + frames * cell
    height = margin * 2 + bins * cell
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for m in range(frames):
        for k in range(bins):
            t = values[m, k] / vmax
            if t >= 0:
                rgb = (255, int(255 * (1 - t)), int(255 * (1 - t)))
            else:
                rgb = (int(255 * (1 + t)), int(255 * (1 + t)), 255)
            x0 = margin + m * cell
            y0 = margin + (bins - 1 - k) * cell
            parts.append(
                f'<rect x="{x0}" y="{y0}" width="{cell}" height="{cell}" '
                f'fill="rgb({rgb[0]},{rgb[1]},{rgb[2]})"/>'
            )
    parts.append(
        f'<text x="{margin}" y="{height - 4}" font-size="10">frames (x) vs bins (y), '
        f"|max|={vmax:.3g}</text>"
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts))
