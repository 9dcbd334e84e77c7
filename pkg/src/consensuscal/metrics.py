"""Calibration quality metrics: MSE, PSNR, a windowed perceptual difference
and cross-camera histogram spread.

The perceptual score follows the layout of image-difference metrics such as
iCID without reproducing any of them: both images are converted to CIELAB,
local statistics are taken over 11 x 11 windows, and lightness, chroma and hue
comparison terms are multiplied together. The score is
``100 * (1 - mean product)``: 0 for identical images, larger when worse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .colorspace import gray_to_lightness, rgb_to_lab
from .imaging import Image, ImageStack, histogram, validate_stack

__all__ = [
    "PSNR_CAP_DB",
    "WINDOW",
    "CameraScore",
    "MetricReport",
    "mse",
    "psnr",
    "psnr_flagged",
    "perceptual_diff",
    "histogram_spread",
    "score_stack",
    "report",
]

PSNR_CAP_DB = 99.0
WINDOW = 11

# Comparison constants for mean differences (CIELAB units squared) and for
# the lightness contrast term.
C_LIGHTNESS = 0.002
C_CONTRAST = 0.1
C_CHROMA = 0.002
C_HUE = 0.002


def _check_shapes(a: Image, b: Image) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def mse(a: Image, b: Image) -> float:
    _check_shapes(a, b)
    d = a.samples - b.samples
    return float(np.mean(d * d))


def psnr_flagged(a: Image, b: Image) -> tuple[float, bool]:
    """PSNR in dB on [0, 1] samples and whether the images are identical.

    Identical images return ``(PSNR_CAP_DB, True)``. Other values are also
    capped at ``PSNR_CAP_DB``.
    """
    m = mse(a, b)
    if m == 0.0:
        return PSNR_CAP_DB, True
    return min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / m)), False


def psnr(a: Image, b: Image) -> float:
    return psnr_flagged(a, b)[0]


def _window_stats(x: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance over every full size x size window (stride 1)."""
    m = ndimage.uniform_filter(x, size=size, mode="nearest")
    m2 = ndimage.uniform_filter(x * x, size=size, mode="nearest")
    h = size // 2
    hi_r = x.shape[0] - (size - 1 - h)
    hi_c = x.shape[1] - (size - 1 - h)
    m = m[h:hi_r, h:hi_c]
    v = np.maximum(m2[h:hi_r, h:hi_c] - m * m, 0.0)
    return m, v


def _window_size(img: Image) -> int:
    return min(WINDOW, img.height, img.width)


@dataclass(frozen=True, eq=False)
class _Features:
    """Window statistics of one image in CIELAB."""

    l_mean: np.ndarray
    l_var: np.ndarray
    a_mean: np.ndarray | None = None
    b_mean: np.ndarray | None = None


def _features(img: Image, size: int) -> _Features:
    if img.channels == 1:
        m, v = _window_stats(gray_to_lightness(img.samples[:, :, 0]), size)
        return _Features(m, v)
    lab = rgb_to_lab(img.samples)
    m, v = _window_stats(lab[..., 0], size)
    ma, _ = _window_stats(lab[..., 1], size)
    mb, _ = _window_stats(lab[..., 2], size)
    return _Features(m, v, ma, mb)


def _compare(f1: _Features, f2: _Features) -> float:
    s1, s2 = np.sqrt(f1.l_var), np.sqrt(f2.l_var)
    term = 1.0 / (1.0 + C_LIGHTNESS * (f1.l_mean - f2.l_mean) ** 2)
    term = term * (2.0 * s1 * s2 + C_CONTRAST) / (f1.l_var + f2.l_var + C_CONTRAST)
    if f1.a_mean is not None:
        c1, c2 = np.hypot(f1.a_mean, f1.b_mean), np.hypot(f2.a_mean, f2.b_mean)
        dc2 = (c1 - c2) ** 2
        dh2 = np.maximum((f1.a_mean - f2.a_mean) ** 2 + (f1.b_mean - f2.b_mean) ** 2 - dc2, 0.0)
        term = term / (1.0 + C_CHROMA * dc2) / (1.0 + C_HUE * dh2)
    return float(100.0 * (1.0 - term.mean()))


def perceptual_diff(a: Image, b: Image) -> float:
    """Windowed lightness/chroma/hue difference score (iCID substitute).

    Lightness compares window means and window contrast (standard
    deviation); chroma and hue compare window-mean colors. Grayscale images
    use the lightness term only.
    """
    _check_shapes(a, b)
    if np.array_equal(a.samples, b.samples):
        return 0.0
    size = _window_size(a)
    return _compare(_features(a, size), _features(b, size))


def histogram_spread(stack: ImageStack) -> float:
    """Cross-camera histogram disagreement.

    For every channel and bin, the population standard deviation of the bin
    count across cameras; summed over bins and channels and divided by the
    pixel count.
    """
    validate_stack(stack)
    counts = np.stack([histogram(im).bins for im in stack.images]).astype(np.float64)
    spread = counts.std(axis=0).sum()
    return float(spread / (stack.images[0].width * stack.images[0].height))


@dataclass(frozen=True)
class CameraScore:
    psnr_db: float
    perceptual: float
    identical: bool = False


@dataclass(frozen=True)
class MetricReport:
    per_camera: tuple[CameraScore, ...]
    mean_psnr_db: float
    mean_perceptual: float
    histogram_spread: float
    perceptual_label: str = field(default="perceptual (iCID-substitute)")


def score_stack(stack: ImageStack, truth: Image, perceptual: bool = True) -> MetricReport:
    """Score every camera of ``stack`` against ``truth``."""
    validate_stack(stack)
    size = _window_size(truth)
    truth_features = _features(truth, size) if perceptual else None
    scores = []
    for im in stack.images:
        p, same = psnr_flagged(im, truth)
        if not perceptual:
            q = float("nan")
        elif same:
            q = 0.0
        else:
            _check_shapes(im, truth)
            q = _compare(_features(im, size), truth_features)
        scores.append(CameraScore(p, q, same))
    return MetricReport(
        tuple(scores),
        float(np.mean([s.psnr_db for s in scores])),
        float(np.mean([s.perceptual for s in scores])),
        histogram_spread(stack),
    )


def report(stack_before: ImageStack, stack_after: ImageStack, truth: Image) -> tuple[MetricReport, MetricReport]:
    if stack_before.shape != stack_after.shape or len(stack_before) != len(stack_after):
        raise ValueError("before and after stacks must agree in size and shape")
    return score_stack(stack_before, truth), score_stack(stack_after, truth)
