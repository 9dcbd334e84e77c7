"""Built-in truth scenes taken from the scikit-image sample data."""

from __future__ import annotations

import cv2
import numpy as np

from .imaging import Image, load_image

__all__ = ["BUILTIN_SCENES", "builtin_scene", "load_scene"]

BUILTIN_SCENES = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry")
_PREFIX = "builtin:"


def builtin_scene(name: str, size: int = 256, grayscale: bool = False) -> Image:
    """Square center crop of a scikit-image sample, resized to ``size``."""
    if name not in BUILTIN_SCENES:
        raise ValueError(f"unknown builtin scene {name!r}; choose from {BUILTIN_SCENES}")
    from skimage import data

    raw = getattr(data, name)()
    h, w = raw.shape[:2]
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = np.ascontiguousarray(raw[top : top + side, left : left + side, :3])
    if side != size:
        crop = cv2.resize(crop, (size, size), interpolation=cv2.INTER_AREA)
    arr = crop.astype(np.float64) / 255.0
    if grayscale:
        arr = arr @ np.array([0.299, 0.587, 0.114])
        arr = np.round(arr * 255.0) / 255.0
    return Image(arr, 8)


def load_scene(entry: str, size: int = 256) -> Image:
    """Load ``builtin:<name>`` scenes or image files by path."""
    if entry.startswith(_PREFIX):
        return builtin_scene(entry[len(_PREFIX) :], size)
    return load_image(entry)
