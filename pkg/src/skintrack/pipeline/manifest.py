"""Trial manifest: schema, parsing and eager validation.

A manifest is a JSON document::

    {
      "trial_id": "demo",
      "card_layout": "card_layout.json",
      "antera_csv": "antera.csv",             # optional
      "config": {"methods": ["original", "histeq", "clahe", "card"], "seed": 0, ...},
      "volunteers": [
        {"id": "V01", "reference_session": 0,
         "sessions": [
           {"date": "2020-02-03", "site": "cheek", "device": "smartphone",
            "image": "V01/cheek_2020-02-03.png",
            "card_corners": [[x, y], [x, y], [x, y], [x, y]],
            "roi": [[x, y], [x, y], [x, y]]},
           {"date": "2020-02-03", "site": "cheek", "device": "antera",
            "parameters": {"L": 62.1, "A": 14.0, "B": 17.9}}
         ]}
      ]
    }

Relative paths resolve against the manifest's directory. ``reference_session``
indexes the volunteer's distinct smartphone dates in ascending order; the
cheek and temple smartphone sessions on that date must carry an ``roi``.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from ..alignment import TransformKind
from ..card import CardAnnotation, CardLayout, load_card_layout
from ..exceptions import ParseError, SkinTrackError, ValidationError
from ..imaging import Roi
from ..normalization import ClaheConfig, NormalizationMethod
from ..stats import DEFAULT_ALPHA

__all__ = [
    "Site",
    "Device",
    "PipelineConfig",
    "SessionRecord",
    "VolunteerRecord",
    "Manifest",
    "load_manifest",
    "parse_manifest",
    "ANTERA_PARAMETERS",
]

# Antera parameter key -> display name used in reports
ANTERA_PARAMETERS = {
    "L": "Colour (L)",
    "A": "Colour (A)",
    "B": "Colour (B)",
    "wrinkle_overall_size": "Wrinkle overall size",
    "wrinkle_depth": "Wrinkle depth",
    "wrinkle_max_depth": "Wrinkle max depth",
}


class Site(str, enum.Enum):
    CHEEK = "cheek"
    TEMPLE = "temple"


class Device(str, enum.Enum):
    SMARTPHONE = "smartphone"
    ANTERA = "antera"


@dataclass(frozen=True)
class PipelineConfig:
    methods: tuple = tuple(NormalizationMethod)
    clahe: ClaheConfig = ClaheConfig()
    ratio_threshold: float = 0.75
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    transform: TransformKind = TransformKind.SIMILARITY
    max_keypoints: int = 200
    align_max_side: Optional[int] = 256
    card_mode: str = "single"

    def with_overrides(self, **kwargs):
        kwargs = {k: v for k, v in kwargs.items() if v is not None}
        if "methods" in kwargs:
            kwargs["methods"] = tuple(NormalizationMethod.parse(m) for m in kwargs["methods"])
        return replace(self, **kwargs)


@dataclass(frozen=True)
class SessionRecord:
    date: dt.date
    site: Site
    device: Device
    image_path: Optional[Path] = None
    parameters: Optional[dict] = None
    card_corners: Optional[CardAnnotation] = None
    roi: Optional[Roi] = None


@dataclass(frozen=True)
class VolunteerRecord:
    id: str
    sessions: tuple
    reference_session: int = 0

    def smartphone_dates(self):
        return sorted({s.date for s in self.sessions if s.device is Device.SMARTPHONE})

    @property
    def reference_date(self):
        return self.smartphone_dates()[self.reference_session]

    def find(self, site, device, date=None):
        """Sessions for a site/device, date-ascending; optionally a single date."""
        found = [s for s in self.sessions if s.site is site and s.device is device]
        if date is not None:
            found = [s for s in found if s.date == date]
        return sorted(found, key=lambda s: s.date)


@dataclass(frozen=True)
class Manifest:
    trial_id: str
    volunteers: tuple
    card_layout_path: Optional[Path]
    config: PipelineConfig = field(default_factory=PipelineConfig)
    card_layout: Optional[CardLayout] = None
    base_dir: Path = Path(".")

    def with_config(self, **overrides):
        return replace(self, config=self.config.with_overrides(**overrides))


class _Ctx:
    """Tracks the JSON path of the value being validated, for error messages."""

    def __init__(self, source):
        self.source = source

    def fail(self, where, message):
        raise ValidationError(f"{self.source}: {where}: {message}")


def _require(ctx, obj, key, where, kind=None):
    if not isinstance(obj, dict) or key not in obj:
        ctx.fail(where, f"missing required field {key!r}")
    value = obj[key]
    if kind is not None and not isinstance(value, kind):
        ctx.fail(f"{where}.{key}", f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _points(ctx, value, where, min_len):
    try:
        pts = tuple((float(p[0]), float(p[1])) for p in value)
    except (TypeError, ValueError, IndexError, KeyError):
        ctx.fail(where, "expected a list of [x, y] pairs")
    if len(pts) < min_len:
        ctx.fail(where, f"expected at least {min_len} points, got {len(pts)}")
    return pts


def _parse_config(ctx, raw):
    if raw is None:
        return PipelineConfig()
    if not isinstance(raw, dict):
        ctx.fail("config", "expected an object")
    cfg = PipelineConfig()
    try:
        clahe_raw = raw.get("clahe") or {}
        clahe = ClaheConfig(
            tiles_x=int(clahe_raw.get("tiles_x", 4)),
            tiles_y=int(clahe_raw.get("tiles_y", 4)),
            clip_limit=None if clahe_raw.get("clip_limit") is None else int(clahe_raw["clip_limit"]),
            clip_factor=float(clahe_raw.get("clip_factor", 40.0)),
        )
        align_side = raw.get("align_max_side", cfg.align_max_side)
        return PipelineConfig(
            methods=tuple(NormalizationMethod.parse(m) for m in raw.get("methods", [m.value for m in cfg.methods])),
            clahe=clahe,
            ratio_threshold=float(raw.get("ratio_threshold", cfg.ratio_threshold)),
            seed=int(raw.get("seed", cfg.seed)),
            alpha=float(raw.get("alpha", cfg.alpha)),
            transform=TransformKind(raw.get("transform", cfg.transform.value)),
            max_keypoints=int(raw.get("max_keypoints", cfg.max_keypoints)),
            align_max_side=None if align_side is None else int(align_side),
            card_mode=str(raw.get("card_mode", cfg.card_mode)),
        )
    except (TypeError, ValueError) as exc:
        ctx.fail("config", str(exc))


def _parse_session(ctx, raw, where, base_dir):
    if not isinstance(raw, dict):
        ctx.fail(where, "expected an object")
    try:
        date = dt.date.fromisoformat(str(_require(ctx, raw, "date", where)))
    except ValueError:
        ctx.fail(f"{where}.date", f"not an ISO date: {raw['date']!r}")
    try:
        site = Site(_require(ctx, raw, "site", where))
        device = Device(raw.get("device", "smartphone"))
    except ValueError as exc:
        ctx.fail(where, str(exc))
    image_path = parameters = corners = roi = None
    if device is Device.SMARTPHONE:
        image_path = base_dir / str(_require(ctx, raw, "image", where))
        if not image_path.is_file():
            ctx.fail(f"{where}.image", f"file not found: {image_path}")
    else:
        params = _require(ctx, raw, "parameters", where, dict)
        try:
            parameters = {str(k): float(v) for k, v in params.items()}
        except (TypeError, ValueError):
            ctx.fail(f"{where}.parameters", "parameter values must be numbers")
    if raw.get("card_corners") is not None:
        try:
            corners = CardAnnotation(_points(ctx, raw["card_corners"], f"{where}.card_corners", 4))
        except SkinTrackError as exc:
            ctx.fail(f"{where}.card_corners", str(exc))
    if raw.get("roi") is not None:
        try:
            roi = Roi(_points(ctx, raw["roi"], f"{where}.roi", 3))
        except ValueError as exc:
            ctx.fail(f"{where}.roi", str(exc))
    return SessionRecord(date, site, device, image_path, parameters, corners, roi)


def _read_antera_csv(ctx, path):
    """Rows of ``volunteer_id,date,site,<parameter>...`` as antera session records."""
    records = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for line_no, row in enumerate(reader, start=2):
            where = f"{path.name}:{line_no}"
            try:
                vid = row.pop("volunteer_id")
                date = dt.date.fromisoformat(row.pop("date"))
                site = Site(row.pop("site"))
                params = {k: float(v) for k, v in row.items() if v not in (None, "")}
            except (KeyError, TypeError, ValueError) as exc:
                ctx.fail(where, f"bad antera row: {exc}")
            records.setdefault(vid, []).append(SessionRecord(date, site, Device.ANTERA, parameters=params))
    return records


def parse_manifest(doc, base_dir=Path("."), source="<manifest>"):
    """Validate a decoded manifest document and build a :class:`Manifest`."""
    ctx = _Ctx(source)
    base_dir = Path(base_dir)
    if not isinstance(doc, dict):
        ctx.fail("<root>", "expected a JSON object")
    trial_id = str(_require(ctx, doc, "trial_id", "<root>"))
    config = _parse_config(ctx, doc.get("config"))

    layout_path = layout = None
    if doc.get("card_layout") is not None:
        layout_path = base_dir / str(doc["card_layout"])
        if not layout_path.is_file():
            ctx.fail("card_layout", f"file not found: {layout_path}")
        layout = load_card_layout(layout_path)
    elif NormalizationMethod.COLOUR_CARD in config.methods:
        ctx.fail("card_layout", "required when the 'card' method is configured")

    antera = {}
    if doc.get("antera_csv") is not None:
        antera_path = base_dir / str(doc["antera_csv"])
        if not antera_path.is_file():
            ctx.fail("antera_csv", f"file not found: {antera_path}")
        antera = _read_antera_csv(ctx, antera_path)

    raw_vols = _require(ctx, doc, "volunteers", "<root>", list)
    volunteers = []
    seen = set()
    for vi, rv in enumerate(raw_vols):
        where = f"volunteers[{vi}]"
        vid = str(_require(ctx, rv, "id", where))
        if vid in seen:
            ctx.fail(f"{where}.id", f"duplicate volunteer id {vid!r}")
        seen.add(vid)
        raw_sessions = _require(ctx, rv, "sessions", where, list)
        sessions = [
            _parse_session(ctx, rs, f"{where}.sessions[{si}]", base_dir) for si, rs in enumerate(raw_sessions)
        ]
        sessions.extend(antera.pop(vid, []))
        if not sessions:
            ctx.fail(f"{where}.sessions", "at least one session is required")
        keys = [(s.date, s.site, s.device) for s in sessions]
        dup = {k for k in keys if keys.count(k) > 1}
        if dup:
            d, site, dev = sorted(dup)[0]
            ctx.fail(f"{where}.sessions", f"duplicate {dev.value} {site.value} session on {d.isoformat()}")
        vol = VolunteerRecord(vid, tuple(sorted(sessions, key=lambda s: (s.date, s.site.value, s.device.value))),
                              int(rv.get("reference_session", 0)))
        dates = vol.smartphone_dates()
        if not dates:
            ctx.fail(where, "no smartphone sessions")
        if not (0 <= vol.reference_session < len(dates)):
            ctx.fail(f"{where}.reference_session", f"index {vol.reference_session} outside 0..{len(dates) - 1}")
        for site in Site:
            ref = vol.find(site, Device.SMARTPHONE, vol.reference_date)
            if not ref or ref[0].roi is None:
                ctx.fail(
                    f"{where}.reference_session",
                    f"reference date {vol.reference_date.isoformat()} needs a {site.value} session with an roi",
                )
        if NormalizationMethod.COLOUR_CARD in config.methods:
            for s in vol.find(Site.CHEEK, Device.SMARTPHONE):
                if s.card_corners is None:
                    ctx.fail(where, f"cheek session {s.date.isoformat()} lacks card_corners (needed by 'card')")
        volunteers.append(vol)
    if antera:
        ctx.fail("antera_csv", f"rows for unknown volunteer(s): {', '.join(sorted(antera))}")
    return Manifest(trial_id, tuple(volunteers), layout_path, config, layout, base_dir)


def load_manifest(path):
    """Read and fully validate a manifest file.

    Raises ParseError for malformed JSON (with line and column) and
    ValidationError for any broken invariant (with the offending field).
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_manifest(doc, path.parent, str(path))
