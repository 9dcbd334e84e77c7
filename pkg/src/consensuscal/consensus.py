"""Per-pixel consensus images built from a stack of registered images.

Every estimator works independently on each (row, column, channel) column of
the stack. Sums are taken over values sorted along the camera axis so that the
result does not depend on camera order, and mean-type results are clamped to
the per-pixel sample range so N copies of an image reproduce it bit-exactly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .imaging import Image, ImageStack, validate_stack

__all__ = [
    "ConsensusMethod",
    "WeightMode",
    "WeightMap",
    "ConsensusImage",
    "pixel_mean",
    "pixel_std",
    "deviation_weights",
    "pixel_weighted_mean",
    "pixel_median",
    "pixel_weighted_median",
    "weighted_median_1d",
    "build_consensus",
]


class ConsensusMethod(str, enum.Enum):
    MEAN = "mean"
    WEIGHTED_MEAN = "weighted-mean"
    MEDIAN = "median"
    WEIGHTED_MEDIAN = "weighted-median"

    @property
    def weighted(self) -> bool:
        return self in (ConsensusMethod.WEIGHTED_MEAN, ConsensusMethod.WEIGHTED_MEDIAN)


class WeightMode(str, enum.Enum):
    """How per-camera weights are derived from the stack.

    ``DEVIATION`` uses each camera's absolute deviation from the pixel mean.
    ``SIGMA`` uses the pixel's population standard deviation, which gives
    every camera the same weight and makes weighted estimators collapse to
    their unweighted counterparts. It is kept for comparison runs.
    """

    DEVIATION = "deviation"
    SIGMA = "sigma"


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Weights in (0, 1] with shape (N, H, W, C)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64, copy=True)
        if w.ndim != 4:
            raise ValueError(f"weights must have shape (N, H, W, C), got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0) or np.any(w > 1.0):
            raise ValueError("weights must be finite and in (0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True, eq=False)
class ConsensusImage:
    image: Image
    method: ConsensusMethod
    weights: WeightMap | None = None


def _stack_array(stack: ImageStack) -> np.ndarray:
    validate_stack(stack)
    return stack.array()


def _bit_depth(stack: ImageStack) -> int:
    return max(im.source_bit_depth for im in stack.images)


def _mean(x: np.ndarray) -> np.ndarray:
    s = np.sort(x, axis=0)
    mu = s.sum(axis=0) / x.shape[0]
    return np.clip(mu, s[0], s[-1])


def pixel_mean(stack: ImageStack) -> Image:
    x = _stack_array(stack)
    return Image.clamped(_mean(x), _bit_depth(stack))


def _std(x: np.ndarray) -> np.ndarray:
    mu = _mean(x)
    sq = np.sort((x - mu) ** 2, axis=0)
    return np.sqrt(sq.sum(axis=0) / x.shape[0])


def pixel_std(stack: ImageStack) -> Image:
    """Population standard deviation across cameras, per pixel and channel."""
    x = _stack_array(stack)
    return Image.clamped(_std(x), _bit_depth(stack))


def _weights(x: np.ndarray, mode: WeightMode, scale: float) -> np.ndarray:
    if scale <= 0 or not np.isfinite(scale):
        raise ValueError(f"deviation scale must be positive, got {scale}")
    mode = WeightMode(mode)
    if mode is WeightMode.DEVIATION:
        d = np.abs(x - _mean(x))
    else:
        d = np.broadcast_to(_std(x), x.shape)
    return 1.0 / (1.0 + scale * d)


def deviation_weights(
    stack: ImageStack, mode: WeightMode = WeightMode.DEVIATION, scale: float = 1.0
) -> WeightMap:
    """Per-camera weights ``1 / (1 + scale * d)``.

    Parameters
    ----------
    stack : ImageStack
        Registered input images.
    mode : WeightMode
        ``DEVIATION`` (default) takes ``d = |x_n - mean|`` per camera;
        ``SIGMA`` takes ``d`` as the pixel standard deviation for all cameras.
    scale : float
        Multiplier on ``d``. 1.0 works on [0, 1] samples; 255.0 mimics
        weights computed on 8-bit values.
    """
    x = _stack_array(stack)
    return WeightMap(_weights(x, mode, scale))


def _check_weights(x: np.ndarray, weights: WeightMap) -> np.ndarray:
    if weights.shape != x.shape:
        raise ValueError(f"weight map shape {weights.shape} does not match stack {x.shape}")
    return weights.weights


def _weighted_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    ws = np.take_along_axis(w, order, axis=0)
    out = (ws * xs).sum(axis=0) / ws.sum(axis=0)
    return np.clip(out, xs[0], xs[-1])


def pixel_weighted_mean(stack: ImageStack, weights: WeightMap) -> Image:
    x = _stack_array(stack)
    w = _check_weights(x, weights)
    return Image.clamped(_weighted_mean(x, w), _bit_depth(stack))


def _median(x: np.ndarray) -> np.ndarray:
    s = np.sort(x, axis=0)
    n = x.shape[0]
    if n % 2:
        return s[n // 2]
    return 0.5 * (s[n // 2 - 1] + s[n // 2])


def pixel_median(stack: ImageStack) -> Image:
    x = _stack_array(stack)
    return Image.clamped(_median(x), _bit_depth(stack))


_TIE_SLACK = 1e-12


def _weighted_median(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Sort candidates; the first one whose cumulative weight reaches half the
    # total minimizes sum(w * |x - v|). Ties resolve to the smaller value.
    # The slack keeps exact ties (two cameras always tie) from being broken
    # by rounding in the weights.
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    ws = np.take_along_axis(w, order, axis=0)
    cum = np.cumsum(ws, axis=0)
    half = 0.5 * cum[-1] * (1.0 - _TIE_SLACK)
    k = np.argmax(cum >= half, axis=0)
    return np.take_along_axis(xs, k[np.newaxis], axis=0)[0]


def weighted_median_1d(values, weights) -> float:
    """Weighted median of a 1-D sample, with ties going to the smaller value."""
    v = np.asarray(values, dtype=np.float64).reshape(-1, 1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    return float(_weighted_median(v, w)[0])


def pixel_weighted_median(stack: ImageStack, weights: WeightMap) -> Image:
    x = _stack_array(stack)
    w = _check_weights(x, weights)
    return Image.clamped(_weighted_median(x, w), _bit_depth(stack))


def build_consensus(
    stack: ImageStack,
    method: ConsensusMethod | str,
    weight_mode: WeightMode | str = WeightMode.DEVIATION,
    deviation_scale: float = 1.0,
) -> ConsensusImage:
    """Merge a stack into one reference image with the chosen estimator."""
    method = ConsensusMethod(method)
    x = _stack_array(stack)
    depth = _bit_depth(stack)
    if method is ConsensusMethod.MEAN:
        return ConsensusImage(Image.clamped(_mean(x), depth), method)
    if method is ConsensusMethod.MEDIAN:
        return ConsensusImage(Image.clamped(_median(x), depth), method)
    wmap = WeightMap(_weights(x, WeightMode(weight_mode), deviation_scale))
    if method is ConsensusMethod.WEIGHTED_MEAN:
        out = _weighted_mean(x, wmap.weights)
    else:
        out = _weighted_median(x, wmap.weights)
    return ConsensusImage(Image.clamped(out, depth), method, wmap)
