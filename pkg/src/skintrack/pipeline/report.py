"""CSV tables and SVG trend charts for a :class:`ReportBundle`.

Reals are written with 6 significant digits, dates as ISO-8601, and CSV
quoting follows RFC 4180. Neither format embeds timestamps, so a bundle
always serialises to the same bytes.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from xml.sax.saxutils import escape

from ..normalization import NormalizationMethod
from .run import COLOUR_METRICS, WRINKLE_METRIC

__all__ = ["emit_csv", "emit_svg_plots", "line_chart_svg", "fmt_real"]


def fmt_real(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.6g}"


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, float):
        return fmt_real(v)
    if hasattr(v, "isoformat"):
        return v.isoformat()
    return str(v)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def _method_label(m):
    return NormalizationMethod(m).label


def emit_csv(bundle, out_dir):
    """Write series, summary, MSE, correlation and skipped-session tables; return their paths."""
    out = Path(out_dir)
    paths = []
    for s in bundle.series:
        name = f"{s.volunteer_id}__{s.metric_name}__{s.method_name}.csv"
        paths.append(_write_csv(out / "series" / name, ["date", "value"], s.points))

    paths.append(
        _write_csv(
            out / "summary.csv",
            ["parameter", "% variation", "significant", "p value", "test",
             "source", "method", "n", "statistic", "normality p", "note"],
            [
                (r.parameter, r.percent_variation, r.significant, r.p_value, r.test,
                 r.source, r.method, r.n, r.statistic, r.normality_p, r.note)
                for r in bundle.summary
            ],
        )
    )
    channels = [label for label, _, _ in COLOUR_METRICS.values()]
    paths.append(
        _write_csv(
            out / "mse.csv",
            ["image type", *(f"MSE {c}" for c in channels)],
            [(_method_label(m), *(row.get(c) for c in channels)) for m, row in bundle.mse.items()],
        )
    )
    methods = list(bundle.correlation)
    paths.append(
        _write_csv(
            out / "correlation.csv",
            ["colour parameter", *(_method_label(m) for m in methods)],
            [(c, *(bundle.correlation[m].get(c) for m in methods)) for c in channels],
        )
    )
    paths.append(
        _write_csv(
            out / "skipped.csv",
            ["volunteer_id", "date", "site", "method", "error"],
            [(s.volunteer_id, s.date, s.site, s.method, s.error) for s in bundle.skipped],
        )
    )
    return paths


# ---------------------------------------------------------------------------
# SVG

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939"]
_W, _PANEL_H = 640, 240
_ML, _MR, _MT, _MB = 70, 150, 36, 44


def _n(x):
    return f"{x:.2f}"


def _ticks(lo, hi, count=5):
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def _panel(y0, title, y_label, series, x_range):
    """SVG elements for one chart panel starting at vertical offset ``y0``."""
    out = []
    pw, ph = _W - _ML - _MR, _PANEL_H - _MT - _MB
    values = [v for _, pts in series for _, v in pts if not math.isnan(v)]
    lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    x_lo, x_hi = x_range
    span = max(x_hi - x_lo, 1)

    def px(d):
        return _ML + (d.toordinal() - x_lo) / span * pw if x_hi > x_lo else _ML + pw / 2

    def py(v):
        return y0 + _MT + (hi - v) / (hi - lo) * ph

    top, bottom = y0 + _MT, y0 + _MT + ph
    out.append(f'<text x="{_n(_W / 2)}" y="{_n(y0 + 20)}" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<rect x="{_ML}" y="{_n(top)}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    for t in _ticks(lo, hi):
        y = py(t)
        out.append(f'<line x1="{_ML - 4}" y1="{_n(y)}" x2="{_ML}" y2="{_n(y)}" stroke="#333"/>')
        out.append(f'<text x="{_ML - 6}" y="{_n(y + 4)}" text-anchor="end" font-size="10">{t:.4g}</text>')
    dates = sorted({d for _, pts in series for d, _ in pts})
    step = max(1, math.ceil(len(dates) / 6))
    for d in dates[::step]:
        x = px(d)
        out.append(f'<line x1="{_n(x)}" y1="{_n(bottom)}" x2="{_n(x)}" y2="{_n(bottom + 4)}" stroke="#333"/>')
        out.append(f'<text x="{_n(x)}" y="{_n(bottom + 16)}" text-anchor="middle" font-size="10">{d.isoformat()}</text>')
    out.append(f'<text x="{_n(_ML + pw / 2)}" y="{_n(bottom + 34)}" text-anchor="middle" font-size="12">Date</text>')
    ymid = (top + bottom) / 2
    out.append(
        f'<text x="16" y="{_n(ymid)}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 16 {_n(ymid)})">{escape(y_label)}</text>'
    )
    for i, (label, pts) in enumerate(series):
        colour = _PALETTE[i % len(_PALETTE)]
        coords = [(px(d), py(v)) for d, v in pts if not math.isnan(v)]
        if len(coords) >= 2:
            path = " ".join(f"{'M' if j == 0 else 'L'}{_n(x)},{_n(y)}" for j, (x, y) in enumerate(coords))
            out.append(f'<path d="{path}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        for x, y in coords:
            out.append(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="2.5" fill="{colour}"/>')
        ly = top + 14 * i + 8
        out.append(f'<rect x="{_W - _MR + 10}" y="{_n(ly - 7)}" width="10" height="3" fill="{colour}"/>')
        out.append(f'<text x="{_W - _MR + 24}" y="{_n(ly)}" font-size="10">{escape(label)}</text>')
    return out


def line_chart_svg(panels):
    """Stacked line charts as one SVG document.

    ``panels`` is a list of ``(title, y_label, [(legend, [(date, value), ...]), ...])``.
    A series with a single point is drawn as a marker only.
    """
    all_dates = [d for _, _, series in panels for _, pts in series for d, _ in pts]
    x_range = (min(all_dates).toordinal(), max(all_dates).toordinal()) if all_dates else (0, 0)
    height = _PANEL_H * max(len(panels), 1)
    body = []
    for i, (title, y_label, series) in enumerate(panels):
        body.extend(_panel(i * _PANEL_H, title, y_label, series, x_range))
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{height}" '
        f'viewBox="0 0 {_W} {height}" font-family="sans-serif">'
    )
    return "\n".join([head, f'<rect width="{_W}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def emit_svg_plots(bundle, out_dir):
    """Per-volunteer colour and wrinkle charts plus one all-volunteers wrinkle chart."""
    out = Path(out_dir) / "plots"
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    volunteers = sorted({s.volunteer_id for s in bundle.series})

    def write(name, panels):
        p = out / name
        p.write_bytes(line_chart_svg(panels).encode("utf-8"))
        paths.append(p)

    for vid in volunteers:
        mine = [s for s in bundle.series if s.volunteer_id == vid]
        panels = []
        for metric, (label, _, _) in COLOUR_METRICS.items():
            series = [(s.method.label, s.points) for s in mine if s.metric_name == metric]
            if series:
                panels.append((f"{vid} skin colour {label}", label, series))
        if panels:
            write(f"{vid}_colour.svg", panels)
        wr = [s for s in mine if s.metric_name == WRINKLE_METRIC]
        if wr:
            write(f"{vid}_wrinkle.svg", [(f"{vid} wrinkle ratio", "Wrinkle ratio", [(vid, wr[0].points)])])
    all_wr = [(s.volunteer_id, s.points) for s in bundle.series if s.metric_name == WRINKLE_METRIC]
    if all_wr:
        write("all_wrinkle.svg", [("Wrinkle ratio, all volunteers", "Wrinkle ratio", all_wr)])
    return paths
