"""Synthetic trial generator.

Each volunteer has a cheek image per session (skin texture, a colour card,
and a uniform LAB illumination cast) and a temple image (persistent skin
texture with dark wrinkle lines, re-photographed under a small similarity
perturbation). In the "drift" half of the cohort the true cheek b value
moves linearly by ``b_drift`` across the trial and the number of wrinkle
lines ramps down. Antera rows are written for the first and last dates.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import affine_transform, gaussian_filter

from ..card import CardLayout
from ..imaging import LAB_MAX, LAB_MIN, lab_to_rgb, rgb_to_lab, save_image

__all__ = ["FixtureSpec", "generate_trial", "COHORT_ATTENDANCE", "card_reference"]

# sessions attended per volunteer in the sparse-attendance cohort (mean 8.5)
COHORT_ATTENDANCE = (10, 10, 9, 9, 10, 8, 7, 9, 5, 8, 7, 10)

# card patch colours in sRGB; the purple key patch sits at row 1, column 3
_CARD_RGB = np.array(
    [
        [[115, 82, 68], [194, 150, 130], [98, 122, 157], [87, 108, 67], [133, 128, 177], [103, 189, 170]],
        [[214, 126, 44], [80, 91, 166], [193, 90, 99], [94, 60, 108], [157, 188, 64], [224, 163, 46]],
        [[56, 61, 150], [70, 148, 73], [175, 54, 60], [231, 199, 31], [187, 86, 149], [8, 133, 161]],
        [[243, 243, 242], [200, 200, 200], [160, 160, 160], [122, 122, 121], [85, 85, 85], [52, 52, 52]],
    ],
    dtype=np.uint8,
)


def card_reference():
    """Card layout whose reference values are the exact LAB of the printed patches."""
    lab = np.round(rgb_to_lab(_CARD_RGB), 4)
    return CardLayout(4, 6, lab, margin=0.5, key_patch=(1, 3))


@dataclass(frozen=True)
class FixtureSpec:
    volunteers: int = 12
    sessions: int = 10
    size: int = 512
    seed: int = 0
    b_drift: float = -6.0
    cast: float = 3.0
    lines_max: int = 12
    lines_min: int = 4
    attendance: tuple | None = None
    start: dt.date = dt.date(2020, 2, 3)
    trial_days: int = 27

    def drifted(self, v):
        return v % 2 == 0

    def dates(self):
        k = np.arange(self.sessions)
        offsets = np.floor(k * self.trial_days / max(self.sessions - 1, 1) + 0.5).astype(int)
        return [self.start + dt.timedelta(days=int(o)) for o in offsets]


def _smooth_noise(rng, shape, sigma):
    f = gaussian_filter(rng.normal(size=shape), sigma, mode="wrap")
    return f / (f.std() + 1e-12)


def _spot_params(rng, shape, count, r_lo, r_hi):
    h, w = shape
    out = []
    for _ in range(count):
        cy, cx = rng.uniform(0.05 * h, 0.95 * h), rng.uniform(0.05 * w, 0.95 * w)
        out.append((cy, cx, rng.uniform(r_lo, r_hi)))
    return out


def _reference_coords(matrix, shape):
    """Reference-frame (x, y) of every output pixel centre under ``matrix``."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    inv = np.linalg.inv(np.vstack([matrix, [0, 0, 1]]))[:2]
    return inv[0, 0] * xx + inv[0, 1] * yy + inv[0, 2], inv[1, 0] * xx + inv[1, 1] * yy + inv[1, 2]


def _spots(params, matrix, X, Y):
    """Gaussian spots evaluated at reference coordinates, each inside its own small window."""
    h, w = X.shape
    out = np.zeros((h, w))
    for cy, cx, r in params:
        ox, oy = matrix[:, :2] @ [cx, cy] + matrix[:, 2]
        half = int(np.ceil(4 * r * 1.1)) + 2
        r0, r1 = max(int(oy) - half, 0), min(int(oy) + half + 1, h)
        c0, c1 = max(int(ox) - half, 0), min(int(ox) + half + 1, w)
        if r0 >= r1 or c0 >= c1:
            continue
        dx, dy = X[r0:r1, c0:c1] - cx, Y[r0:r1, c0:c1] - cy
        out[r0:r1, c0:c1] += np.exp(-(dx * dx + dy * dy) / (2 * r * r))
    return out


def _lines(params, count, X, Y):
    """Dark wrinkle profile of the first ``count`` line descriptions at reference coordinates."""
    out = np.zeros(X.shape)
    for y0, amp, period, phase, x0, x1 in params[:count]:
        d = Y - (y0 + amp * np.sin(2 * np.pi * X / period + phase))
        near = np.abs(d) < 6.0
        taper = np.clip(np.minimum(X[near] - x0, x1 - X[near]) / 8.0, 0.0, 1.0)
        out[near] = np.maximum(out[near], np.exp(-(d[near] ** 2) / (2 * 1.1**2)) * taper)
    return out


def _warp_field(field, matrix):
    """Cubic resampling of a smooth field so that reference point p lands at ``matrix @ [p, 1]``."""
    inv = np.linalg.inv(np.vstack([matrix, [0, 0, 1]]))
    m_rc = inv[:2, :2][::-1, ::-1]
    t_rc = inv[:2, 2][::-1]
    offset = m_rc @ np.array([0.5, 0.5]) + t_rc - 0.5
    return affine_transform(field, m_rc, offset, order=3, mode="nearest")


def _similarity(rng, size, index):
    if index == 0:
        return np.hstack([np.eye(2), np.zeros((2, 1))])
    theta = np.deg2rad(rng.uniform(-3.0, 3.0))
    s = rng.uniform(0.98, 1.02)
    tx, ty = rng.uniform(-6.0, 6.0, size=2)
    a, b = s * np.cos(theta), s * np.sin(theta)
    c = size / 2.0
    lin = np.array([[a, -b], [b, a]])
    t = np.array([c, c]) - lin @ np.array([c, c]) + [tx, ty]
    return np.hstack([lin, t[:, None]])


def _card_box(size):
    return 0.55 * size, 0.66 * size, 0.95 * size, 0.92 * size


def _render_cheek(spec, layout, skin, texture, cast, jitter):
    size = spec.size
    lab = np.empty((size, size, 3))
    lab[..., 0] = skin[0] + 1.2 * texture
    lab[..., 1] = skin[1] + 0.4 * texture
    lab[..., 2] = skin[2]
    x0, y0, x1, y1 = (v + d for v, d in zip(_card_box(size), jitter))
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    u = (xx - x0) / (x1 - x0)
    v = (yy - y0) / (y1 - y0)
    inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
    col = np.clip((u * layout.cols).astype(int), 0, layout.cols - 1)
    row = np.clip((v * layout.rows).astype(int), 0, layout.rows - 1)
    lab[inside] = layout.reference[row[inside], col[inside]]
    lab = np.clip(lab + cast, LAB_MIN, LAB_MAX)
    corners = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
    return lab_to_rgb(lab), corners


def _cheek_roi(size):
    cx, cy, r = 0.3 * size, 0.35 * size, 0.15 * size
    ang = np.arange(6) * np.pi / 3
    return [[round(cx + r * np.cos(a), 2), round(cy + r * np.sin(a), 2)] for a in ang]


def _temple_roi(size):
    return [[0.3 * size, 0.3 * size], [0.7 * size, 0.3 * size], [0.7 * size, 0.7 * size], [0.3 * size, 0.7 * size]]


def generate_trial(out_dir, spec=None):
    """Write images, card layout, antera CSV and ``manifest.json`` under ``out_dir``.

    Returns the manifest path. Output is fully determined by ``spec``.
    """
    spec = spec or FixtureSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layout = card_reference()
    (out / "card_layout.json").write_text(json.dumps(layout.to_dict(), indent=2) + "\n", encoding="utf-8")

    size = spec.size
    dates = spec.dates()
    master = np.random.default_rng(spec.seed)
    vol_seeds = master.integers(0, 2**32, size=spec.volunteers)
    volunteers = []
    antera_rows = []

    for v in range(spec.volunteers):
        vid = f"V{v + 1:02d}"
        rng = np.random.default_rng(vol_seeds[v])
        skin = np.array([rng.uniform(55, 68), rng.uniform(10, 16), rng.uniform(15, 21)])
        cheek_tex = _smooth_noise(rng, (size, size), 4.0)
        temple_smooth = (
            rng.uniform(60, 68)
            + 4.0 * _smooth_noise(rng, (size, size), 3.0)
            + 3.0 * _smooth_noise(rng, (size, size), 9.0)
        )
        spot_params = _spot_params(rng, (size, size), 60, 1.5, 4.5)
        temple_ab = (rng.uniform(10, 15), rng.uniform(14, 19))
        line_params = [
            (
                rng.uniform(0.33, 0.67) * size,
                rng.uniform(2, 6),
                rng.uniform(0.3, 0.6) * size,
                rng.uniform(0, 2 * np.pi),
                rng.uniform(0.3, 0.4) * size,
                rng.uniform(0.6, 0.7) * size,
            )
            for _ in range(spec.lines_max)
        ]
        drifted = spec.drifted(v)
        if spec.attendance is not None:
            n_att = spec.attendance[v % len(spec.attendance)]
            middle = sorted(rng.choice(np.arange(1, spec.sessions - 1), n_att - 2, replace=False).tolist())
            attended = [0, *middle, spec.sessions - 1]
        else:
            attended = list(range(spec.sessions))

        vdir = out / vid
        vdir.mkdir(exist_ok=True)
        sessions = []
        for k in range(spec.sessions):
            frac = k / max(spec.sessions - 1, 1)
            b_true = skin[2] + (spec.b_drift * frac if drifted else 0.0)
            n_lines = (
                int(round(spec.lines_max - (spec.lines_max - spec.lines_min) * frac)) if drifted else spec.lines_max - 2
            )
            # session randomness is drawn even for missed sessions so attendance never shifts other images
            cast = rng.uniform(-spec.cast, spec.cast, size=3)
            jitter = rng.uniform(-3, 3, size=4)
            warp = _similarity(rng, size, k)
            gain = rng.uniform(-1.5, 1.5)
            noise_seed = int(rng.integers(0, 2**32))
            antera_noise = rng.normal(0, 0.3, size=6)
            if k not in attended:
                continue
            date = dates[k].isoformat()

            cheek, corners = _render_cheek(spec, layout, (skin[0], skin[1], b_true), cheek_tex, cast, jitter)
            cheek_path = vdir / f"cheek_{date}.png"
            save_image(cheek_path, cheek)

            nrng = np.random.default_rng(noise_seed)
            lab = np.empty((size, size, 3))
            # sharp structure is rendered analytically in session coordinates so that no
            # session is softened by resampling more than another
            X, Y = _reference_coords(warp, (size, size))
            lab[..., 0] = (
                _warp_field(temple_smooth, warp)
                + gain
                - 14.0 * _spots(spot_params, warp, X, Y)
                - 28.0 * _lines(line_params, n_lines, X, Y)
                + nrng.normal(0, 0.4, size=(size, size))
            )
            lab[..., 1], lab[..., 2] = temple_ab
            temple = lab_to_rgb(np.clip(lab, LAB_MIN, LAB_MAX))
            temple_path = vdir / f"temple_{date}.png"
            save_image(temple_path, temple)

            is_ref = k == attended[0]
            sessions.append(
                {
                    "date": date,
                    "site": "cheek",
                    "device": "smartphone",
                    "image": cheek_path.relative_to(out).as_posix(),
                    "card_corners": [[round(x, 3), round(y, 3)] for x, y in corners],
                    **({"roi": _cheek_roi(size)} if is_ref else {}),
                }
            )
            sessions.append(
                {
                    "date": date,
                    "site": "temple",
                    "device": "smartphone",
                    **({"roi": _temple_roi(size)} if is_ref else {}),
                    "image": temple_path.relative_to(out).as_posix(),
                    "fixture_transform": np.round(warp, 6).tolist(),
                }
            )
            if k in (0, spec.sessions - 1):
                lab_true = np.array([skin[0], skin[1], b_true]) + antera_noise[:3]
                depth = 0.02 * n_lines
                antera_rows.append([vid, date, "cheek", *np.round(lab_true, 3), "", "", ""])
                antera_rows.append(
                    [
                        vid,
                        date,
                        "temple",
                        "",
                        "",
                        "",
                        round(1.5 * n_lines + antera_noise[3], 3),
                        round(depth + 0.01 * antera_noise[4], 4),
                        round(2.2 * depth + 0.02 * antera_noise[5], 4),
                    ]
                )
        volunteers.append({"id": vid, "reference_session": 0, "sessions": sessions})

    with open(out / "antera.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["volunteer_id", "date", "site", "L", "A", "B",
                    "wrinkle_overall_size", "wrinkle_depth", "wrinkle_max_depth"])
        w.writerows(antera_rows)

    manifest = {
        "trial_id": f"synthetic-{spec.seed}",
        "card_layout": "card_layout.json",
        "antera_csv": "antera.csv",
        "config": {"methods": ["original", "histeq", "clahe", "card"], "seed": 0, "alpha": 0.05},
        "volunteers": volunteers,
        "fixture": {
            "drifted": [f"V{v + 1:02d}" for v in range(spec.volunteers) if spec.drifted(v)],
            "b_drift": spec.b_drift,
        },
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path
