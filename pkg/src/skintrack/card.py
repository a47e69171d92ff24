"""Colour-card calibration.

A printed card of known CIELAB patch colours is held in frame. Given the four
annotated corners of its patch grid, the key patch is located, its observed
LAB mean measured, and the reference-minus-observed difference applied to
every pixel of the image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import EmptyRoi, IndexOutOfGrid, MissingAnnotation, ParseError, ValidationError
from .imaging import LAB_MAX, LAB_MIN, Roi, lab_to_rgb, rgb_to_lab, roi_mask
from .validation import check_rgb_image

__all__ = [
    "CardLayout",
    "CardAnnotation",
    "ColourDelta",
    "load_card_layout",
    "locate_patch_region",
    "measure_patch",
    "compute_delta",
    "apply_delta",
    "card_delta",
    "fit_patch_affine",
    "normalize_by_card",
]


@dataclass(frozen=True)
class ColourDelta:
    dL: float
    dA: float
    dB: float

    def __post_init__(self):
        if not all(np.isfinite([self.dL, self.dA, self.dB])):
            raise ValueError("colour delta must be finite")

    def as_array(self):
        return np.array([self.dL, self.dA, self.dB])

    def __neg__(self):
        return ColourDelta(-self.dL, -self.dA, -self.dB)


@dataclass(frozen=True)
class CardLayout:
    """Patch grid of a colour card and the true LAB value of every patch.

    ``key_patch`` is a zero-based (row, col); the default (1, 3) is the
    second-row, fourth-column purple patch.
    """

    rows: int
    cols: int
    reference: np.ndarray = field(repr=False)
    margin: float = 0.5
    key_patch: tuple = (1, 3)

    def __post_init__(self):
        ref = np.asarray(self.reference, dtype=float)
        if ref.shape != (self.rows, self.cols, 3):
            raise ValidationError(
                f"card reference must hold {self.rows}x{self.cols} LAB triples, got shape {ref.shape}"
            )
        if not (0 < self.margin <= 1):
            raise ValidationError(f"card margin must be in (0, 1], got {self.margin}")
        r, c = self.key_patch
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise ValidationError(f"key patch {self.key_patch} outside {self.rows}x{self.cols} grid")
        object.__setattr__(self, "reference", ref)
        object.__setattr__(self, "key_patch", (int(r), int(c)))

    def reference_lab(self, row=None, col=None):
        if row is None:
            row, col = self.key_patch
        return self.reference[row, col].copy()

    def to_dict(self):
        return {
            "rows": self.rows,
            "cols": self.cols,
            "margin": self.margin,
            "key_patch": list(self.key_patch),
            "reference": self.reference.round(4).tolist(),
        }


def load_card_layout(path):
    """Read a card layout document (JSON syntax)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return CardLayout(
            rows=int(doc["rows"]),
            cols=int(doc["cols"]),
            reference=np.asarray(doc["reference"], dtype=float),
            margin=float(doc.get("margin", 0.5)),
            key_patch=tuple(doc.get("key_patch", (1, 3))),
        )
    except KeyError as exc:
        raise ValidationError(f"{path}: missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class CardAnnotation:
    """Corners of the patch grid: top-left, top-right, bottom-right, bottom-left."""

    corners: tuple

    def __post_init__(self):
        pts = np.asarray(self.corners, dtype=float)
        if pts.shape != (4, 2) or not np.all(np.isfinite(pts)):
            raise ValidationError("card annotation needs exactly 4 finite (x, y) corners")
        edges = np.roll(pts, -1, axis=0) - pts
        nxt = np.roll(edges, -1, axis=0)
        cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
        if not (np.all(cross > 0) or np.all(cross < 0)):
            raise ValidationError("card corners must form a convex quadrilateral with positive area")
        object.__setattr__(self, "corners", tuple((float(x), float(y)) for x, y in pts))

    @classmethod
    def coerce(cls, value):
        if value is None:
            raise MissingAnnotation("no colour-card annotation for this image")
        return value if isinstance(value, cls) else cls(tuple(map(tuple, value)))

    def point(self, u, v):
        """Bilinear position at fractional column ``u`` and row ``v`` of the grid."""
        tl, tr, br, bl = (np.array(c) for c in self.corners)
        top = tl + (tr - tl) * u
        bottom = bl + (br - bl) * u
        return top + (bottom - top) * v


def locate_patch_region(ann, layout, row, col):
    """Quadrilateral covering patch (row, col), shrunk about its centre by ``layout.margin``."""
    ann = CardAnnotation.coerce(ann)
    if not (0 <= row < layout.rows and 0 <= col < layout.cols):
        raise IndexOutOfGrid(f"patch ({row}, {col}) outside {layout.rows}x{layout.cols} grid")
    half = layout.margin / 2.0
    uc = (col + 0.5) / layout.cols
    vc = (row + 0.5) / layout.rows
    du = half / layout.cols
    dv = half / layout.rows
    quad = [
        ann.point(uc - du, vc - dv),
        ann.point(uc + du, vc - dv),
        ann.point(uc + du, vc + dv),
        ann.point(uc - du, vc + dv),
    ]
    return Roi(tuple(map(tuple, quad)))


def measure_patch(img, roi):
    """Channel-wise mean of the LAB values of the pixels inside ``roi``."""
    img = check_rgb_image(img)
    mask = roi_mask(img.shape, roi)
    if not mask.any():
        raise EmptyRoi("patch region contains no pixel centres")
    return rgb_to_lab(img[mask]).mean(axis=0)


def compute_delta(reference, observed):
    """Reference minus observed, per LAB channel."""
    ref = np.asarray(reference, dtype=float)
    obs = np.asarray(observed, dtype=float)
    d = ref - obs
    return ColourDelta(float(d[0]), float(d[1]), float(d[2]))


def _shift_lab(img, fn):
    img = check_rgb_image(img)
    lab = fn(rgb_to_lab(img))
    lab = np.clip(lab, LAB_MIN, LAB_MAX)
    return lab_to_rgb(lab)


def apply_delta(img, d):
    """Shift every pixel by ``d`` in LAB, clamp to the LAB ranges and return RGB."""
    shift = d.as_array() if isinstance(d, ColourDelta) else np.asarray(d, dtype=float)
    return _shift_lab(img, lambda lab: lab + shift)


def card_delta(img, ann, layout):
    """Delta that maps the observed key patch onto its reference value."""
    r, c = layout.key_patch
    observed = measure_patch(img, locate_patch_region(ann, layout, r, c))
    return compute_delta(layout.reference_lab(r, c), observed)


def fit_patch_affine(img, ann, layout):
    """Per-channel least-squares ``reference = gain * observed + offset`` over all patches.

    Not part of the single-patch method; offered as an opt-in alternative.
    Channels whose observed values do not vary fall back to a pure offset.
    """
    observed = np.array(
        [
            measure_patch(img, locate_patch_region(ann, layout, r, c))
            for r in range(layout.rows)
            for c in range(layout.cols)
        ]
    )
    reference = layout.reference.reshape(-1, 3)
    gain = np.ones(3)
    offset = np.zeros(3)
    for ch in range(3):
        x, y = observed[:, ch], reference[:, ch]
        if x.size >= 2 and np.ptp(x) > 1e-9:
            gain[ch], offset[ch] = np.polyfit(x, y, 1)
        else:
            offset[ch] = float(np.mean(y - x))
    return gain, offset


def normalize_by_card(img, ann, layout, mode="single"):
    """Colour-card normalisation.

    ``mode="single"`` shifts the image by the key-patch delta.
    ``mode="multi"`` applies the per-channel affine fit of :func:`fit_patch_affine`.
    """
    img = check_rgb_image(img)
    if ann is None:
        raise MissingAnnotation("no colour-card annotation for this image")
    if mode == "single":
        return apply_delta(img, card_delta(img, ann, layout))
    if mode == "multi":
        gain, offset = fit_patch_affine(img, ann, layout)
        return _shift_lab(img, lambda lab: lab * gain + offset)
    raise ValueError(f"unknown card mode {mode!r}")
