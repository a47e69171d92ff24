"""Input validation helpers used by the functional API and the estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import LengthMismatch, SampleTooSmall


def check_rgb_image(img, name="img"):
    """Return ``img`` as a C-contiguous ``uint8`` array of shape (H, W, 3).

    Integer arrays whose values fit in 0..255 are accepted and cast; anything
    else raises ``ValueError``.
    """
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1")
    return _as_uint8(arr, name)


def check_gray_image(img, name="img"):
    """Return ``img`` as a C-contiguous ``uint8`` array of shape (H, W)."""
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1")
    return _as_uint8(arr, name)


def _as_uint8(arr, name):
    if arr.dtype == np.uint8:
        return np.ascontiguousarray(arr)
    if arr.dtype.kind not in "iub":
        raise ValueError(f"{name} must be an 8-bit integer raster, got dtype {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError(f"{name} values must lie in [0, 255]")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def check_polygon(vertices, name="roi"):
    """Return polygon vertices as a float (N, 2) array of (x, y), N >= 3."""
    arr = np.asarray(vertices, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must be a sequence of (x, y) pairs")
    if arr.shape[0] < 3:
        raise ValueError(f"{name} needs at least 3 vertices, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} vertices must be finite")
    return arr


def check_samples(x, name="x", min_size=1):
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size < min_size:
        raise SampleTooSmall(f"{name} needs at least {min_size} values, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_paired(x, y, min_size=1):
    x = check_samples(x, "x", 0)
    y = check_samples(y, "y", 0)
    if x.size != y.size:
        raise LengthMismatch(f"length mismatch: {x.size} != {y.size}")
    if x.size < min_size:
        raise SampleTooSmall(f"need at least {min_size} pairs, got {x.size}")
    return x, y
