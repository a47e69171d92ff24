"""Image I/O, colour-space conversions and polygon regions of interest.

Images are plain numpy arrays: RGB rasters are ``uint8`` of shape (H, W, 3),
grayscale rasters ``uint8`` of shape (H, W). Rows are display rows.

Colour conventions
------------------
Luma and chroma use full-range BT.601 (the JFIF YCbCr matrix)::

    Y  = 0.299 R + 0.587 G + 0.114 B
    Cb = 128 - 0.168736 R - 0.331264 G + 0.5 B
    Cr = 128 + 0.5 R - 0.418688 G - 0.081312 B

each rounded half-up and clamped to [0, 255]. CIELAB uses sRGB primaries and
the D65 white point (Xn, Yn, Zn) = (0.95047, 1.0, 1.08883).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageOps, UnidentifiedImageError

from .exceptions import DecodeError, EmptyRoi
from .validation import check_gray_image, check_polygon, check_rgb_image

__all__ = [
    "Roi",
    "load_image",
    "save_image",
    "to_grayscale",
    "rgb_to_yuv",
    "yuv_to_rgb",
    "rgb_to_lab",
    "lab_to_rgb",
    "roi_mask",
    "mean_over_roi",
    "LAB_MIN",
    "LAB_MAX",
]

_ACCEPTED_FORMATS = {"JPEG", "PNG", "MPO"}  # MPO: multi-picture JPEG written by many phones


def _round_u8(x):
    """Round half-up and saturate to uint8."""
    return np.clip(np.floor(np.asarray(x) + 0.5), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------------
# Regions of interest


@dataclass(frozen=True)
class Roi:
    """Polygon in image coordinates; x runs along columns, y along rows.

    Pixel ``(row, col)`` has its centre at ``(col + 0.5, row + 0.5)``.
    """

    polygon: tuple

    def __post_init__(self):
        arr = check_polygon(self.polygon)
        object.__setattr__(self, "polygon", tuple((float(x), float(y)) for x, y in arr))

    @classmethod
    def rectangle(cls, x0, y0, x1, y1):
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @property
    def vertices(self):
        return np.array(self.polygon, dtype=float)

    def bounds(self):
        v = self.vertices
        return v[:, 0].min(), v[:, 1].min(), v[:, 0].max(), v[:, 1].max()


def _points_in_polygon(px, py, poly, eps=1e-9):
    """Boundary-inclusive point-in-polygon test (crossing number + edge check)."""
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        dx, dy = bx - ax, by - ay
        cross = dx * (py - ay) - dy * (px - ax)
        seg_len = np.hypot(dx, dy)
        dot = (px - ax) * dx + (py - ay) * dy
        on_edge |= (np.abs(cross) <= eps * max(seg_len, 1.0)) & (dot >= -eps) & (dot <= seg_len**2 + eps)
        straddles = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = ax + dx * (py - ay) / dy
        inside ^= straddles & (px < x_cross)
    return inside | on_edge


def roi_mask(shape, roi):
    """Boolean mask of pixels whose centres lie inside ``roi`` (boundary inclusive)."""
    h, w = shape[:2]
    poly = roi.vertices if isinstance(roi, Roi) else check_polygon(roi)
    mask = np.zeros((h, w), dtype=bool)
    c0 = max(int(np.floor(poly[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(poly[:, 0].max() - 0.5)), w - 1)
    r0 = max(int(np.floor(poly[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(poly[:, 1].max() - 0.5)), h - 1)
    if c0 > c1 or r0 > r1:
        return mask
    ys, xs = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
    mask[r0 : r1 + 1, c0 : c1 + 1] = _points_in_polygon(xs + 0.5, ys + 0.5, poly)
    return mask


def mean_over_roi(channel, roi):
    """Arithmetic mean of the pixels of a single-channel raster inside ``roi``.

    Raises EmptyRoi when no pixel centre lies inside the polygon.
    """
    channel = np.asarray(channel)
    if channel.ndim != 2:
        raise ValueError(f"expected a single-channel raster, got shape {channel.shape}")
    mask = roi_mask(channel.shape, roi)
    if not mask.any():
        raise EmptyRoi("no pixel centres inside the region of interest")
    return float(channel[mask].astype(float).mean())


# --------------------------------------------------------------------------
# I/O


def load_image(path):
    """Decode a JPEG or PNG file into an RGB ``uint8`` array.

    EXIF orientation is applied so rows of the result are display rows.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in _ACCEPTED_FORMATS:
                raise DecodeError(f"{path}: unsupported format {im.format!r}")
            im = ImageOps.exif_transpose(im)
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except DecodeError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc


def save_image(path, img, compress_level=1):
    """Write an RGB or grayscale ``uint8`` raster as PNG (lossless at any compression level)."""
    arr = np.asarray(img)
    arr = check_gray_image(arr) if arr.ndim == 2 else check_rgb_image(arr)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG", compress_level=compress_level)


# --------------------------------------------------------------------------
# Luma / chroma

_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YUV_INV = np.linalg.inv(_YUV)
_CHROMA_OFFSET = np.array([0.0, 128.0, 128.0])


def to_grayscale(img):
    """BT.601 luma, rounded half-up: identical to the Y plane of :func:`rgb_to_yuv`."""
    img = check_rgb_image(img)
    return _round_u8(img.astype(float) @ _YUV[0])


def rgb_to_yuv(img):
    img = check_rgb_image(img)
    yuv = img.astype(float) @ _YUV.T + _CHROMA_OFFSET
    out = _round_u8(yuv)
    out[..., 0] = to_grayscale(img)
    return out


def yuv_to_rgb(yuv):
    yuv = check_rgb_image(yuv, "yuv")
    return _round_u8((yuv.astype(float) - _CHROMA_OFFSET) @ _YUV_INV.T)


# --------------------------------------------------------------------------
# CIELAB

_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_DELTA = 6.0 / 29.0

LAB_MIN = np.array([0.0, -128.0, -128.0])
LAB_MAX = np.array([100.0, 127.0, 127.0])


def _srgb_decode(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _srgb_encode(c):
    return np.where(c <= 0.0031308, 12.92 * c, 1.055 * np.power(c, 1 / 2.4) - 0.055)


_LINEAR_LUT = _srgb_decode(np.arange(256) / 255.0)


def _f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb):
    """Convert 8-bit sRGB values (..., 3) to CIELAB (D65), as float64.

    Steps: piecewise sRGB decoding, linear RGB -> XYZ with the sRGB matrix,
    normalisation by the D65 white, then L = 116 f(Y) - 16,
    a = 500 (f(X) - f(Y)), b = 200 (f(Y) - f(Z)).
    """
    rgb = np.asarray(rgb)
    if rgb.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {rgb.shape}")
    if rgb.dtype == np.uint8:
        linear = _LINEAR_LUT[rgb]
    else:
        linear = _srgb_decode(np.clip(np.asarray(rgb, dtype=float), 0, 255) / 255.0)
    xyz = linear @ _RGB_TO_XYZ.T / _WHITE_D65
    fx, fy, fz = (_f(xyz[..., i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb(lab):
    """Inverse of :func:`rgb_to_lab`; out-of-gamut results are clamped per channel."""
    lab = np.asarray(lab, dtype=float)
    if lab.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {lab.shape}")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * _WHITE_D65
    linear = np.clip(xyz @ _XYZ_TO_RGB.T, 0.0, 1.0)
    return _round_u8(_srgb_encode(linear) * 255.0)
