"""Image and image-stack containers, histograms and raster I/O.

Samples are held as float64 arrays of shape (height, width, channels) in
the range [0, 1]. Quantization happens only when reading or writing files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

__all__ = [
    "Image",
    "ImageStack",
    "Histogram",
    "ImageIOError",
    "StackValidationError",
    "DimensionMismatchError",
    "ChannelMismatchError",
    "TooFewImagesError",
    "load_image",
    "save_image",
    "quantize",
    "stack_from_images",
    "histogram",
    "validate_stack",
    "bin_index",
    "NUM_BINS",
]

NUM_BINS = 256
_SUPPORTED_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}


class ImageIOError(OSError):
    """Raised when an image file cannot be read or written."""


class StackValidationError(ValueError):
    """Base class for ImageStack invariant violations."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class DimensionMismatchError(StackValidationError):
    pass


class ChannelMismatchError(StackValidationError):
    pass


class TooFewImagesError(StackValidationError):
    pass


@dataclass(frozen=True, eq=False)
class Image:
    """An immutable image with samples in [0, 1].

    Parameters
    ----------
    samples : array_like
        Array of shape (H, W) or (H, W, C) with C in {1, 3}. A 2-D array is
        promoted to a single channel. Values must be finite and in [0, 1].
    source_bit_depth : int
        Bit depth of the file the image came from (8 or 16).
    """

    samples: np.ndarray
    source_bit_depth: int = 8

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W), (H, W, 1) or (H, W, 3) samples, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("samples must lie in [0, 1]; clamp before constructing")
        if self.source_bit_depth not in (8, 16):
            raise ValueError(f"source_bit_depth must be 8 or 16, got {self.source_bit_depth}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @classmethod
    def clamped(cls, samples, source_bit_depth: int = 8) -> "Image":
        """Build an image after clamping ``samples`` to [0, 1]."""
        return cls(np.clip(samples, 0.0, 1.0), source_bit_depth)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.samples.shape

    def channel(self, c: int) -> np.ndarray:
        return self.samples[:, :, c]

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.samples, other.samples))

    __hash__ = None


@dataclass(frozen=True)
class ImageStack:
    """N registered images of one scene. Use :func:`validate_stack` to check invariants."""

    images: tuple[Image, ...]
    scene_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> Image:
        return self.images[i]

    def __iter__(self):
        return iter(self.images)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.images[0].shape

    def array(self) -> np.ndarray:
        """Samples stacked to shape (N, H, W, C)."""
        return np.stack([im.samples for im in self.images], axis=0)

    @classmethod
    def from_array(cls, arr: np.ndarray, scene_id: str = "", source_bit_depth: int = 8) -> "ImageStack":
        return cls(tuple(Image(a, source_bit_depth) for a in arr), scene_id)


@dataclass(frozen=True)
class Histogram:
    """Per-channel 256-bin counts; ``bins`` has shape (C, 256)."""

    bins: np.ndarray
    total: int

    def __post_init__(self):
        b = np.array(self.bins, dtype=np.int64, copy=True)
        b.setflags(write=False)
        object.__setattr__(self, "bins", b)

    @property
    def channels(self) -> int:
        return self.bins.shape[0]

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.bins, axis=1)


def bin_index(samples: np.ndarray) -> np.ndarray:
    """Histogram bin of each sample: floor(s * 255), with s = 1.0 in bin 255."""
    idx = np.floor(np.asarray(samples, dtype=np.float64) * (NUM_BINS - 1)).astype(np.intp)
    return np.clip(idx, 0, NUM_BINS - 1)


def histogram(img: Image) -> Histogram:
    idx = bin_index(img.samples)
    bins = np.stack([np.bincount(idx[:, :, c].ravel(), minlength=NUM_BINS) for c in range(img.channels)])
    return Histogram(bins, img.width * img.height)


def validate_stack(stack: ImageStack) -> None:
    """Raise a :class:`StackValidationError` subclass if ``stack`` is malformed."""
    n = len(stack.images)
    if n < 2:
        raise TooFewImagesError(f"a stack needs at least 2 images, got {n}")
    ref = stack.images[0]
    for i, im in enumerate(stack.images[1:], start=1):
        if (im.height, im.width) != (ref.height, ref.width):
            raise DimensionMismatchError(
                f"image {i} is {im.width}x{im.height}, expected {ref.width}x{ref.height}", index=i
            )
        if im.channels != ref.channels:
            raise ChannelMismatchError(
                f"image {i} has {im.channels} channels, expected {ref.channels}", index=i
            )


def load_image(path, strip_alpha: bool = False) -> Image:
    """Read a PNG/PPM/PGM file and normalize it to [0, 1].

    Parameters
    ----------
    path : str or Path
        File to read.
    strip_alpha : bool
        Drop an alpha channel instead of rejecting the file.
    """
    path = Path(path)
    if path.suffix.lower() not in _SUPPORTED_SUFFIXES:
        raise ImageIOError(f"unsupported format {path.suffix!r} for {path}")
    if not path.is_file():
        raise ImageIOError(f"no such file: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(f"could not decode {path}")
    if raw.dtype == np.uint8:
        depth = 8
    elif raw.dtype == np.uint16:
        depth = 16
    else:
        raise ImageIOError(f"unsupported sample type {raw.dtype} in {path}")

    if raw.ndim == 2:
        arr = raw[:, :, np.newaxis]
    elif raw.shape[2] == 3:
        arr = raw[:, :, ::-1]  # BGR -> RGB
    elif raw.shape[2] == 4:
        if not strip_alpha:
            raise ImageIOError(f"{path} has an alpha channel; pass strip_alpha=True to drop it")
        arr = raw[:, :, 2::-1]
    elif raw.shape[2] == 2:
        if not strip_alpha:
            raise ImageIOError(f"{path} has an alpha channel; pass strip_alpha=True to drop it")
        arr = raw[:, :, :1]
    else:
        raise ImageIOError(f"unsupported channel layout with {raw.shape[2]} channels in {path}")

    scale = float(2**depth - 1)
    return Image(arr.astype(np.float64) / scale, source_bit_depth=depth)


def quantize(samples: np.ndarray, bit_depth: int) -> np.ndarray:
    """Round half up to integer codes in [0, 2**bit_depth - 1]."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    scale = float(2**bit_depth - 1)
    codes = np.floor(np.asarray(samples, dtype=np.float64) * scale + 0.5)
    dtype = np.uint8 if bit_depth == 8 else np.uint16
    return np.clip(codes, 0, scale).astype(dtype)


def save_image(img: Image, path, bit_depth: int = 8) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in _SUPPORTED_SUFFIXES:
        raise ImageIOError(f"unsupported format {path.suffix!r} for {path}")
    if suffix == ".pgm" and img.channels != 1:
        raise ImageIOError("PGM output requires a single-channel image")
    if suffix == ".ppm" and img.channels != 3:
        raise ImageIOError("PPM output requires a three-channel image")
    codes = quantize(img.samples, bit_depth)
    out = codes[:, :, 0] if img.channels == 1 else np.ascontiguousarray(codes[:, :, ::-1])
    try:
        ok = cv2.imwrite(str(path), out)
    except cv2.error as exc:
        raise ImageIOError(f"could not write {path}: {exc}") from exc
    if not ok:
        raise ImageIOError(f"could not write {path}")


def stack_from_images(images: Sequence[Image], scene_id: str = "") -> ImageStack:
    stack = ImageStack(tuple(images), scene_id)
    validate_stack(stack)
    return stack
