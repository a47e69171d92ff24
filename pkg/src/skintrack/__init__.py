"""Longitudinal skin colour and wrinkle measurement from smartphone photographs."""

from .alignment import AlignTransform, TransformKind, align_images, estimate_transform, match_knn, transfer_roi
from .card import CardAnnotation, CardLayout, ColourDelta, load_card_layout, normalize_by_card
from .exceptions import SkinTrackError
from .imaging import Roi, lab_to_rgb, load_image, rgb_to_lab, rgb_to_yuv, save_image, to_grayscale, yuv_to_rgb
from .metrics import SkinColourSample, WrinkleMetrics, skin_colour, wrinkle_for_session, wrinkle_ratio
from .normalization import ClaheConfig, NormalizationMethod, normalize
from .sift import Keypoint, detect_and_compute
from .stats import PairedSamples, TestResult, paired_compare

__version__ = "0.1.0"

__all__ = [
    "AlignTransform",
    "TransformKind",
    "align_images",
    "estimate_transform",
    "match_knn",
    "transfer_roi",
    "CardAnnotation",
    "CardLayout",
    "ColourDelta",
    "load_card_layout",
    "normalize_by_card",
    "SkinTrackError",
    "Roi",
    "lab_to_rgb",
    "load_image",
    "rgb_to_lab",
    "rgb_to_yuv",
    "save_image",
    "to_grayscale",
    "yuv_to_rgb",
    "SkinColourSample",
    "WrinkleMetrics",
    "skin_colour",
    "wrinkle_for_session",
    "wrinkle_ratio",
    "ClaheConfig",
    "NormalizationMethod",
    "normalize",
    "Keypoint",
    "detect_and_compute",
    "PairedSamples",
    "TestResult",
    "paired_compare",
]
