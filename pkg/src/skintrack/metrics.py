"""Skin colour and wrinkle measurements.

Edge maps use 3x3 kernels with edge-replicated borders; each response is
taken in absolute value and saturated to 8 bits. The wrinkle ratio is the
mean of the Sobel-combined map (bitwise OR of the X and Y maps) divided by
the mean grayscale intensity over the same pixels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .alignment import transfer_roi
from .card import CardAnnotation, card_delta
from .exceptions import EmptyRoi, ImageTooSmall, MissingAnnotation, ZeroMeanImage
from .imaging import LAB_MAX, LAB_MIN, lab_to_rgb, rgb_to_lab, roi_mask, to_grayscale
from .normalization import NormalizationMethod, equalized_luma, normalize, with_luma
from .validation import check_gray_image, check_rgb_image

__all__ = [
    "SkinColourSample",
    "WrinkleMetrics",
    "skin_colour",
    "sobel_x",
    "sobel_y",
    "sobel_combined",
    "laplacian_magnitude",
    "wrinkle_ratio",
    "wrinkle_for_session",
]

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])
SOBEL_Y = SOBEL_X.T
LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]])


@dataclass(frozen=True)
class SkinColourSample:
    L_mean: float
    a_mean: float
    b_mean: float
    pixel_count: int
    method: NormalizationMethod
    session: Optional[object] = None

    def as_array(self):
        return np.array([self.L_mean, self.a_mean, self.b_mean])


@dataclass(frozen=True)
class WrinkleMetrics:
    sobel_mean: float
    image_mean: float
    wrinkle_ratio: float
    laplacian_mean: float
    session: Optional[object] = None


def _masked_lab_mean(img, mask, method, clahe, card_corners, card_layout, card_mode):
    if method is NormalizationMethod.COLOUR_CARD:
        # per-pixel operation: shifting only the ROI pixels equals shifting the whole image
        if card_corners is None or card_layout is None:
            raise MissingAnnotation("colour-card normalisation needs card corners and a card layout")
        if card_mode != "single":
            img = normalize(img, method, card_corners=card_corners, card_layout=card_layout, card_mode=card_mode)
            return rgb_to_lab(img[mask]).mean(axis=0)
        d = card_delta(img, CardAnnotation.coerce(card_corners), card_layout).as_array()
        shifted = lab_to_rgb(np.clip(rgb_to_lab(img[mask]) + d, LAB_MIN, LAB_MAX))
        return rgb_to_lab(shifted).mean(axis=0)
    if method is NormalizationMethod.ORIGINAL:
        return rgb_to_lab(img[mask]).mean(axis=0)
    # the luma map needs the whole image; recombining with chroma is per-pixel
    luma = equalized_luma(img, method, clahe)
    return rgb_to_lab(with_luma(img[mask], luma[mask])).mean(axis=0)


def skin_colour(img, roi, method=NormalizationMethod.ORIGINAL, *, clahe=None, card_corners=None,
                card_layout=None, card_mode="single", session=None):
    """Mean CIELAB colour over ``roi`` after normalising ``img`` with ``method``."""
    img = check_rgb_image(img)
    method = NormalizationMethod.parse(method)
    mask = roi_mask(img.shape, roi)
    if not mask.any():
        raise EmptyRoi("skin ROI contains no pixel centres")
    lab = _masked_lab_mean(img, mask, method, clahe, card_corners, card_layout, card_mode)
    return SkinColourSample(float(lab[0]), float(lab[1]), float(lab[2]), int(mask.sum()), method, session)


def _filter3(img, kernel):
    g = check_gray_image(img)
    if g.shape[0] < 3 or g.shape[1] < 3:
        raise ImageTooSmall("3x3 filters need an image of at least 3x3 pixels")
    p = np.pad(g.astype(np.int32), 1, mode="edge")
    h, w = g.shape
    acc = np.zeros((h, w), dtype=np.int32)
    for dr in range(3):
        for dc in range(3):
            k = kernel[dr, dc]
            if k:
                acc += k * p[dr : dr + h, dc : dc + w]
    return np.minimum(np.abs(acc), 255).astype(np.uint8)


def sobel_x(img):
    return _filter3(img, SOBEL_X)


def sobel_y(img):
    return _filter3(img, SOBEL_Y)


def sobel_combined(img):
    return sobel_x(img) | sobel_y(img)


def laplacian_magnitude(img):
    return _filter3(img, LAPLACIAN)


def wrinkle_ratio(img, mask=None, session=None):
    """Sobel-combined mean over grayscale mean, optionally restricted to ``mask``."""
    g = check_gray_image(img)
    if mask is None:
        mask = np.ones(g.shape, dtype=bool)
    elif not mask.any():
        raise EmptyRoi("wrinkle mask is empty")
    image_mean = float(g[mask].mean())
    if image_mean == 0:
        raise ZeroMeanImage("mean intensity is zero; wrinkle ratio undefined")
    sobel_mean = float(sobel_combined(g)[mask].mean())
    laplacian_mean = float(laplacian_magnitude(g)[mask].mean())
    return WrinkleMetrics(sobel_mean, image_mean, sobel_mean / image_mean, laplacian_mean, session)


def wrinkle_for_session(img, reference_roi, transform, session=None, return_crop=False):
    """Wrinkle metrics over the reference ROI carried into this session's image.

    The image is cropped to the bounding box of the transferred ROI, converted
    to grayscale, and both means are taken over pixels inside the ROI only.
    """
    img = check_rgb_image(img)
    roi = transfer_roi(reference_roi, transform)
    mask = roi_mask(img.shape, roi)
    if not mask.any():
        raise EmptyRoi("transferred wrinkle ROI falls outside the image")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    gray = to_grayscale(img[r0:r1, c0:c1])
    metrics = wrinkle_ratio(gray, mask[r0:r1, c0:c1], session)
    if return_crop:
        return metrics, gray
    return metrics
