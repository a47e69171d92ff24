"""Illumination normalisation: global and contrast-limited adaptive equalisation.

Both equalisers act on the luma plane only; chroma planes pass through
untouched and the image is converted back to RGB afterwards.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ImageTooSmall, MissingAnnotation
from .imaging import rgb_to_yuv, to_grayscale, yuv_to_rgb
from .validation import check_gray_image, check_rgb_image

__all__ = [
    "NormalizationMethod",
    "ClaheConfig",
    "equalization_lut",
    "clip_histogram",
    "histogram_equalize_gray",
    "histogram_equalize_y",
    "clahe_gray",
    "clahe_y",
    "equalized_luma",
    "with_luma",
    "normalize",
]


class NormalizationMethod(str, enum.Enum):
    ORIGINAL = "original"
    HIST_EQUAL_Y = "histeq"
    CLAHE = "clahe"
    COLOUR_CARD = "card"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown normalisation method {value!r} (expected one of {names})") from None

    @property
    def label(self):
        return _LABELS[self]


_LABELS = {
    NormalizationMethod.ORIGINAL: "Original",
    NormalizationMethod.HIST_EQUAL_Y: "Histogram",
    NormalizationMethod.CLAHE: "CLAHE",
    NormalizationMethod.COLOUR_CARD: "CC Normalised",
}


@dataclass(frozen=True)
class ClaheConfig:
    """Tile grid and clip limit for :func:`clahe_gray`.

    ``clip_limit`` is an absolute per-tile bin count. When it is None the
    limit is derived from each tile's area as
    ``max(1, round(clip_factor * tile_area / 256))``.
    """

    tiles_x: int = 4
    tiles_y: int = 4
    clip_limit: Optional[int] = None
    clip_factor: float = 40.0

    def __post_init__(self):
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ValueError("tile grid must be at least 1x1")
        if self.clip_limit is not None and self.clip_limit < 1:
            raise ValueError("clip_limit must be >= 1")
        if self.clip_factor <= 0:
            raise ValueError("clip_factor must be positive")

    def limit_for(self, tile_area):
        if self.clip_limit is not None:
            return int(self.clip_limit)
        return max(1, int(np.floor(self.clip_factor * tile_area / 256.0 + 0.5)))


def equalization_lut(hist):
    """256-entry remap ``round((cdf(v) - cdf_min) / (N - cdf_min) * 255)``.

    ``cdf_min`` is the cumulative count at the smallest occupied bin. A
    histogram with a single occupied bin yields the identity map.
    """
    hist = np.asarray(hist, dtype=np.int64)
    cdf = np.cumsum(hist)
    total = cdf[-1]
    occupied = np.flatnonzero(hist)
    if occupied.size == 0:
        return np.arange(256, dtype=np.uint8)
    cdf_min = cdf[occupied[0]]
    if total == cdf_min:
        return np.arange(256, dtype=np.uint8)
    scaled = (cdf - cdf_min) / (total - cdf_min) * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def clip_histogram(hist, limit):
    """Clip bins at ``limit`` and hand the excess back uniformly.

    Each bin receives ``excess // 256``; the remaining ``excess % 256`` counts
    go one per bin starting at bin 0. The total count is preserved.
    """
    hist = np.asarray(hist, dtype=np.int64)
    excess = int(np.maximum(hist - limit, 0).sum())
    out = np.minimum(hist, limit)
    if excess:
        out += excess // 256
        out[: excess % 256] += 1
    return out


def histogram_equalize_gray(img):
    img = check_gray_image(img)
    return equalization_lut(np.bincount(img.ravel(), minlength=256))[img]


def histogram_equalize_y(img):
    yuv = rgb_to_yuv(img)
    yuv[..., 0] = histogram_equalize_gray(yuv[..., 0])
    return yuv_to_rgb(yuv)


def with_luma(rgb, luma):
    """Replace the luma of ``rgb`` pixels by ``luma``, keeping their chroma.

    Works pixel by pixel, so it may be applied to any subset of an image.
    """
    rgb = np.asarray(rgb)
    yuv = rgb_to_yuv(rgb.reshape(-1, 1, 3))
    yuv[:, 0, 0] = np.asarray(luma).reshape(-1)
    return yuv_to_rgb(yuv).reshape(rgb.shape)


def _tile_edges(size, count):
    return np.floor(np.arange(count + 1) * size / count + 0.5).astype(int)


def _interp_axis(size, edges):
    """Lower/upper tile index and upper weight for each pixel centre along an axis."""
    centres = (edges[:-1] + edges[1:]) / 2.0
    pos = np.arange(size) + 0.5
    lo = np.searchsorted(centres, pos, side="right") - 1
    hi = lo + 1
    lo_c = np.clip(lo, 0, len(centres) - 1)
    hi_c = np.clip(hi, 0, len(centres) - 1)
    span = centres[hi_c] - centres[lo_c]
    weight = np.where(hi_c != lo_c, (pos - centres[lo_c]) / np.where(span == 0, 1, span), 0.0)
    return lo_c, hi_c, weight


def clahe_gray(img, cfg=None):
    """Contrast-limited adaptive histogram equalisation on a tile grid.

    Each tile's histogram is clipped (:func:`clip_histogram`) and turned into
    an equalisation map; constant tiles keep the identity map. Every output
    pixel blends the maps of the four nearest tile centres bilinearly, with
    tile indices clamped at the borders.
    """
    cfg = cfg or ClaheConfig()
    img = check_gray_image(img)
    h, w = img.shape
    if h < cfg.tiles_y or w < cfg.tiles_x:
        raise ImageTooSmall(f"{w}x{h} image cannot hold a {cfg.tiles_x}x{cfg.tiles_y} tile grid")
    ey = _tile_edges(h, cfg.tiles_y)
    ex = _tile_edges(w, cfg.tiles_x)

    luts = np.empty((cfg.tiles_y, cfg.tiles_x, 256), dtype=float)
    for i in range(cfg.tiles_y):
        for j in range(cfg.tiles_x):
            tile = img[ey[i] : ey[i + 1], ex[j] : ex[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=256)
            if np.count_nonzero(hist) <= 1:
                luts[i, j] = np.arange(256)
                continue
            luts[i, j] = equalization_lut(clip_histogram(hist, cfg.limit_for(tile.size)))

    y0, y1, wy = _interp_axis(h, ey)
    x0, x1, wx = _interp_axis(w, ex)
    y0, y1, wy = y0[:, None], y1[:, None], wy[:, None]
    top = (1 - wx) * luts[y0, x0, img] + wx * luts[y0, x1, img]
    bottom = (1 - wx) * luts[y1, x0, img] + wx * luts[y1, x1, img]
    out = (1 - wy) * top + wy * bottom
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def clahe_y(img, cfg=None):
    yuv = rgb_to_yuv(img)
    yuv[..., 0] = clahe_gray(yuv[..., 0], cfg)
    return yuv_to_rgb(yuv)


def equalized_luma(img, method, clahe=None):
    """New luma plane produced by the histogram or CLAHE method."""
    y = to_grayscale(img)
    method = NormalizationMethod.parse(method)
    if method is NormalizationMethod.HIST_EQUAL_Y:
        return histogram_equalize_gray(y)
    if method is NormalizationMethod.CLAHE:
        return clahe_gray(y, clahe)
    raise ValueError(f"{method.value} does not act on luma alone")


def normalize(img, method, *, clahe=None, card_corners=None, card_layout=None, card_mode="single"):
    """Apply one normalisation method to an RGB image.

    ``card_corners`` and ``card_layout`` are needed only for the colour-card
    method; MissingAnnotation is raised when either is absent.
    """
    method = NormalizationMethod.parse(method)
    if method is NormalizationMethod.ORIGINAL:
        return check_rgb_image(img).copy()
    if method is NormalizationMethod.HIST_EQUAL_Y:
        return histogram_equalize_y(img)
    if method is NormalizationMethod.CLAHE:
        return clahe_y(img, clahe)
    if card_corners is None or card_layout is None:
        raise MissingAnnotation("colour-card normalisation needs card corners and a card layout")
    from .card import normalize_by_card

    return normalize_by_card(img, card_corners, card_layout, mode=card_mode)
