"""Trial orchestration: per-session measurement, series assembly and trial statistics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..alignment import AlignTransform, align_images, downsample, transfer_roi
from ..exceptions import SkinTrackError
from ..imaging import load_image, save_image, to_grayscale
from ..metrics import sobel_combined, skin_colour, wrinkle_for_session
from ..normalization import NormalizationMethod, normalize
from ..sift import detect_and_compute
from ..stats import PairedSamples, mse, paired_compare, pearson, percent_variation
from .manifest import ANTERA_PARAMETERS, Device, Site

__all__ = [
    "MetricSeries",
    "SkippedSession",
    "SummaryRow",
    "ReportBundle",
    "PipelineError",
    "run_pipeline",
    "COLOUR_METRICS",
    "WRINKLE_METRIC",
]

log = logging.getLogger(__name__)

# series metric name -> (display parameter, SkinColourSample attribute, antera key)
COLOUR_METRICS = {
    "colour_L": ("Colour (L)", "L_mean", "L"),
    "colour_a": ("Colour (A)", "a_mean", "A"),
    "colour_b": ("Colour (B)", "b_mean", "B"),
}
WRINKLE_METRIC = "wrinkle_ratio"


class PipelineError(SkinTrackError):
    """The run produced no usable measurement at all."""


@dataclass(frozen=True)
class MetricSeries:
    volunteer_id: str
    metric_name: str
    method: Optional[NormalizationMethod]
    points: tuple

    def __post_init__(self):
        dates = [d for d, _ in self.points]
        if any(b <= a for a, b in zip(dates, dates[1:])):
            raise ValueError("series points must be strictly date-ascending")

    @property
    def method_name(self):
        return self.method.value if self.method is not None else "none"


@dataclass(frozen=True)
class SkippedSession:
    volunteer_id: str
    date: object
    site: str
    method: str
    error: str


@dataclass(frozen=True)
class SummaryRow:
    parameter: str
    source: str
    method: str
    n: int
    percent_variation: float = math.nan
    significant: Optional[bool] = None
    p_value: float = math.nan
    test: str = ""
    statistic: float = math.nan
    normality_p: float = math.nan
    note: str = ""


@dataclass
class ReportBundle:
    trial_id: str
    series: list = field(default_factory=list)
    colour_samples: list = field(default_factory=list)
    wrinkle_metrics: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    summary: list = field(default_factory=list)
    mse: dict = field(default_factory=dict)
    correlation: dict = field(default_factory=dict)
    alpha: float = 0.05

    def series_for(self, volunteer_id, metric_name, method=None):
        for s in self.series:
            if s.volunteer_id == volunteer_id and s.metric_name == metric_name and s.method == method:
                return s
        return None


def _describe(exc):
    return f"{type(exc).__name__}: {exc}"


@dataclass
class _VolunteerResult:
    colour: list = field(default_factory=list)  # (date, method, SkinColourSample)
    wrinkle: list = field(default_factory=list)  # (date, WrinkleMetrics)
    skipped: list = field(default_factory=list)


def _process_cheek(vol, cfg, layout, keep_dir, res):
    ref = vol.find(Site.CHEEK, Device.SMARTPHONE, vol.reference_date)[0]
    ref_gray = ref_feat = factor = None
    for s in vol.find(Site.CHEEK, Device.SMARTPHONE):
        try:
            img = load_image(s.image_path)
            roi = s.roi
            if roi is None:
                # carry the reference ROI into this session
                if ref_gray is None:
                    ref_gray = to_grayscale(load_image(ref.image_path))
                    factor = max(1, math.ceil(max(ref_gray.shape) / cfg.align_max_side)) if cfg.align_max_side else 1
                    ref_feat = detect_and_compute(downsample(ref_gray, factor), cfg.max_keypoints)
                t = _align(ref_gray, img, cfg, ref_feat)
                roi = transfer_roi(ref.roi, t)
        except (SkinTrackError, OSError) as exc:
            res.skipped.append(SkippedSession(vol.id, s.date, s.site.value, "all", _describe(exc)))
            continue
        for method in cfg.methods:
            try:
                sample = skin_colour(
                    img, roi, method, clahe=cfg.clahe, card_corners=s.card_corners,
                    card_layout=layout, card_mode=cfg.card_mode, session=s.date,
                )
            except (SkinTrackError, ValueError) as exc:
                res.skipped.append(SkippedSession(vol.id, s.date, s.site.value, method.value, _describe(exc)))
                continue
            res.colour.append((s.date, method, sample))
            if keep_dir is not None:
                out = normalize(img, method, clahe=cfg.clahe, card_corners=s.card_corners,
                                card_layout=layout, card_mode=cfg.card_mode)
                save_image(keep_dir / vol.id / f"cheek_{s.date.isoformat()}_{method.value}.png", out)


def _align(ref_gray, img, cfg, ref_feat):
    return align_images(
        ref_gray, to_grayscale(img), cfg.transform, cfg.ratio_threshold, cfg.seed,
        cfg.max_keypoints, cfg.align_max_side, ref_feat,
    )


def _process_temple(vol, cfg, keep_dir, res):
    sessions = vol.find(Site.TEMPLE, Device.SMARTPHONE)
    ref = vol.find(Site.TEMPLE, Device.SMARTPHONE, vol.reference_date)[0]
    try:
        ref_img = load_image(ref.image_path)
        ref_gray = to_grayscale(ref_img)
        factor = max(1, math.ceil(max(ref_gray.shape) / cfg.align_max_side)) if cfg.align_max_side else 1
        ref_feat = detect_and_compute(downsample(ref_gray, factor), cfg.max_keypoints)
    except (SkinTrackError, OSError) as exc:
        for s in sessions:
            res.skipped.append(SkippedSession(vol.id, s.date, s.site.value, "none", f"reference unusable: {_describe(exc)}"))
        return
    for s in sessions:
        try:
            if s.date == ref.date:
                img, t = ref_img, AlignTransform.identity(cfg.transform)
            else:
                img = load_image(s.image_path)
                t = _align(ref_gray, img, cfg, ref_feat)
            metrics, crop = wrinkle_for_session(img, ref.roi, t, session=s.date, return_crop=True)
        except (SkinTrackError, OSError, ValueError) as exc:
            res.skipped.append(SkippedSession(vol.id, s.date, s.site.value, "none", _describe(exc)))
            continue
        res.wrinkle.append((s.date, metrics))
        if keep_dir is not None:
            stem = keep_dir / vol.id / f"temple_{s.date.isoformat()}"
            save_image(f"{stem}_crop.png", crop)
            save_image(f"{stem}_sobel.png", sobel_combined(crop))


def _process_volunteer(vol, cfg, layout, keep_dir):
    res = _VolunteerResult()
    _process_cheek(vol, cfg, layout, keep_dir, res)
    _process_temple(vol, cfg, keep_dir, res)
    return res


def _first_last(points):
    return (points[0][1], points[-1][1]) if len(points) >= 2 else None


def _summary_row(parameter, source, method, pairs, alpha):
    if len(pairs) < 3:
        return SummaryRow(parameter, source, method, len(pairs), note="fewer than 3 volunteers with first and last values")
    base = [p[0] for p in pairs]
    final = [p[1] for p in pairs]
    try:
        pv = percent_variation(base, final)
    except SkinTrackError:
        pv = math.nan
    try:
        r = paired_compare(PairedSamples(base, final, parameter), alpha)
    except SkinTrackError as exc:
        return SummaryRow(parameter, source, method, len(pairs), pv, note=_describe(exc))
    return SummaryRow(parameter, source, method, len(pairs), pv, r.significant, r.p_value,
                      r.test_kind.value, r.statistic, r.normality_p)


def _antera(vol, site):
    return vol.find(site, Device.ANTERA)


def _trial_statistics(bundle, manifest):
    cfg = manifest.config
    rows = []
    # Antera parameters, first vs last session
    for key, label in ANTERA_PARAMETERS.items():
        pairs = []
        for vol in manifest.volunteers:
            pts = [(s.date, s.parameters[key]) for site in Site for s in _antera(vol, site) if key in s.parameters]
            fl = _first_last(sorted(pts))
            if fl:
                pairs.append(fl)
        if pairs:
            rows.append(_summary_row(label, "antera", "", pairs, cfg.alpha))
    # smartphone series
    by_key = {}
    for s in bundle.series:
        by_key.setdefault((s.metric_name, s.method), []).append(s)
    for method in cfg.methods:
        for metric, (label, _, _) in COLOUR_METRICS.items():
            pairs = [fl for s in by_key.get((metric, method), []) if (fl := _first_last(s.points))]
            rows.append(_summary_row(label, "smartphone", method.value, pairs, cfg.alpha))
    pairs = [fl for s in by_key.get((WRINKLE_METRIC, None), []) if (fl := _first_last(s.points))]
    rows.append(_summary_row("Wrinkle ratio", "smartphone", "", pairs, cfg.alpha))
    bundle.summary = rows

    # day-1 agreement between devices, per method and channel
    colour = {(vid, d, m): smp for vid, d, m, smp in bundle.colour_samples}
    for method in cfg.methods:
        mse_row, corr_row = {}, {}
        for metric, (label, attr, key) in COLOUR_METRICS.items():
            xs, ys = [], []
            for vol in manifest.volunteers:
                antera = [s for s in _antera(vol, Site.CHEEK) if key in s.parameters]
                if not antera:
                    continue
                first = antera[0]
                smp = colour.get((vol.id, first.date, method))
                if smp is None:
                    continue
                xs.append(getattr(smp, attr))
                ys.append(first.parameters[key])
            try:
                mse_row[label] = mse(xs, ys)
            except (SkinTrackError, ValueError):
                mse_row[label] = math.nan
            try:
                corr_row[label] = pearson(xs, ys)
            except (SkinTrackError, ValueError):
                corr_row[label] = math.nan
        bundle.mse[method] = mse_row
        bundle.correlation[method] = corr_row


def run_pipeline(manifest, out_dir=None, keep_intermediates=False, workers=1):
    """Process every session of a validated manifest and compute trial statistics.

    Per-session failures are collected in ``bundle.skipped``; the run raises
    :class:`PipelineError` only when nothing at all could be measured.
    Results are merged in (volunteer, date, method) order, so the bundle does
    not depend on ``workers``.
    """
    cfg = manifest.config
    keep_dir = Path(out_dir) / "intermediates" if keep_intermediates and out_dir is not None else None
    vols = sorted(manifest.volunteers, key=lambda v: v.id)

    def work(vol):
        return _process_volunteer(vol, cfg, manifest.card_layout, keep_dir)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, vols))
    else:
        results = [work(v) for v in vols]

    bundle = ReportBundle(manifest.trial_id, alpha=cfg.alpha)
    method_rank = {m: i for i, m in enumerate(NormalizationMethod)}
    for vol, res in zip(vols, results):
        colour = sorted(res.colour, key=lambda t: (t[0], method_rank[t[1]]))
        bundle.colour_samples.extend((vol.id, d, m, smp) for d, m, smp in colour)
        bundle.wrinkle_metrics.extend((vol.id, d, wm) for d, wm in sorted(res.wrinkle, key=lambda t: t[0]))
        bundle.skipped.extend(sorted(res.skipped, key=lambda s: (s.date, s.site, s.method)))
        for s in res.skipped:
            log.warning("skipped %s %s %s [%s]: %s", s.volunteer_id, s.date, s.site, s.method, s.error)
        for method in cfg.methods:
            pts = [(d, smp) for d, m, smp in colour if m is method]
            if not pts:
                continue
            for metric, (_, attr, _) in COLOUR_METRICS.items():
                bundle.series.append(
                    MetricSeries(vol.id, metric, method, tuple((d, getattr(smp, attr)) for d, smp in pts))
                )
        if res.wrinkle:
            bundle.series.append(
                MetricSeries(vol.id, WRINKLE_METRIC, None,
                             tuple((d, wm.wrinkle_ratio) for d, wm in sorted(res.wrinkle, key=lambda t: t[0])))
            )
    if not bundle.colour_samples and not bundle.wrinkle_metrics:
        raise PipelineError("no session produced a usable measurement")
    _trial_statistics(bundle, manifest)
    return bundle
