"""Scikit-learn style wrappers.

``X`` is a sequence of RGB images (a list, or an ``(n, H, W, 3)`` array).
Normalisers return images in the same container type; extractors return
``(n, k)`` feature arrays, so they compose in a :class:`sklearn.pipeline.Pipeline`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .alignment import TransformKind, align_images, downsample
from .card import CardAnnotation, apply_delta, card_delta
from .imaging import roi_mask, to_grayscale
from .metrics import skin_colour, wrinkle_ratio
from .normalization import ClaheConfig, NormalizationMethod, clahe_y, histogram_equalize_y
from .sift import detect_and_compute
from .validation import check_rgb_image

__all__ = [
    "YHistogramEqualizer",
    "ClaheEqualizer",
    "ColourCardNormalizer",
    "SkinColourExtractor",
    "WrinkleRatio",
    "SessionAligner",
]


def _images(X):
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = X[None]
    return [check_rgb_image(x) for x in X]


def _like(X, images):
    return np.stack(images) if isinstance(X, np.ndarray) else images


class YHistogramEqualizer(TransformerMixin, BaseEstimator):
    """Global histogram equalisation of luma. Stateless."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return _like(X, [histogram_equalize_y(x) for x in _images(X)])


class ClaheEqualizer(TransformerMixin, BaseEstimator):
    def __init__(self, tiles_x=4, tiles_y=4, clip_limit=None):
        self.tiles_x = tiles_x
        self.tiles_y = tiles_y
        self.clip_limit = clip_limit

    def fit(self, X, y=None):
        self.config_ = ClaheConfig(self.tiles_x, self.tiles_y, self.clip_limit)
        return self

    def transform(self, X):
        cfg = getattr(self, "config_", None) or ClaheConfig(self.tiles_x, self.tiles_y, self.clip_limit)
        return _like(X, [clahe_y(x, cfg) for x in _images(X)])


class ColourCardNormalizer(TransformerMixin, BaseEstimator):
    """Learns the key-patch LAB delta of each calibration image, then applies it.

    ``fit(X, corners=...)`` measures one delta per image; ``transform`` needs
    the same number of images. ``fit_transform`` does both on one batch.
    """

    def __init__(self, layout=None):
        self.layout = layout

    def fit(self, X, y=None, corners=None):
        if self.layout is None:
            raise ValueError("a CardLayout is required")
        images = _images(X)
        if corners is None or len(corners) != len(images):
            raise ValueError("one card annotation per image is required")
        self.deltas_ = [card_delta(img, CardAnnotation.coerce(c), self.layout) for img, c in zip(images, corners)]
        return self

    def transform(self, X):
        if not hasattr(self, "deltas_"):
            raise NotFittedError("ColourCardNormalizer is not fitted")
        images = _images(X)
        if len(images) != len(self.deltas_):
            raise ValueError(f"fitted on {len(self.deltas_)} images, got {len(images)}")
        return _like(X, [apply_delta(img, d) for img, d in zip(images, self.deltas_)])

    def fit_transform(self, X, y=None, corners=None):
        return self.fit(X, corners=corners).transform(X)


class SkinColourExtractor(TransformerMixin, BaseEstimator):
    """Mean LAB over a fixed ROI, one ``(L, a, b)`` row per image."""

    def __init__(self, roi=None, method="original", clahe=None):
        self.roi = roi
        self.method = method
        self.clahe = clahe

    def fit(self, X, y=None):
        if self.roi is None:
            raise ValueError("an ROI is required")
        self.method_ = NormalizationMethod.parse(self.method)
        if self.method_ is NormalizationMethod.COLOUR_CARD:
            raise ValueError("use ColourCardNormalizer before this extractor for the card method")
        return self

    def transform(self, X):
        if not hasattr(self, "method_"):
            raise NotFittedError("SkinColourExtractor is not fitted")
        return np.array([skin_colour(x, self.roi, self.method_, clahe=self.clahe).as_array() for x in _images(X)])


class WrinkleRatio(TransformerMixin, BaseEstimator):
    """Rows of ``(sobel_mean, image_mean, wrinkle_ratio, laplacian_mean)``, optionally over an ROI."""

    def __init__(self, roi=None):
        self.roi = roi

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        rows = []
        for x in _images(X):
            mask = None if self.roi is None else roi_mask(x.shape, self.roi)
            m = wrinkle_ratio(to_grayscale(x), mask)
            rows.append((m.sobel_mean, m.image_mean, m.wrinkle_ratio, m.laplacian_mean))
        return np.array(rows, dtype=float).reshape(-1, 4)


class SessionAligner(BaseEstimator):
    """Fit on a reference image; ``predict`` returns the reference-to-session transform of each image."""

    def __init__(self, kind="similarity", ratio_threshold=0.75, max_keypoints=300, seed=0, max_side=None):
        self.kind = kind
        self.ratio_threshold = ratio_threshold
        self.max_keypoints = max_keypoints
        self.seed = seed
        self.max_side = max_side

    def fit(self, X, y=None):
        ref = _images(X)[0]
        self.reference_ = to_grayscale(ref)
        factor = 1
        if self.max_side:
            factor = max(1, int(np.ceil(max(self.reference_.shape) / self.max_side)))
        self.features_ = detect_and_compute(downsample(self.reference_, factor), self.max_keypoints)
        return self

    def predict(self, X):
        if not hasattr(self, "reference_"):
            raise NotFittedError("SessionAligner is not fitted")
        # cached reference features are only valid for the factor used in fit
        same_factor = all(max(x.shape[:2]) <= max(self.reference_.shape) for x in _images(X))
        return [
            align_images(
                self.reference_, to_grayscale(x), TransformKind(self.kind), self.ratio_threshold, self.seed,
                self.max_keypoints, self.max_side, self.features_ if same_factor else None,
            )
            for x in _images(X)
        ]
