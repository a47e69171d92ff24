"""Command-line entry point.

Exit codes: 0 success, 1 fatal error, 2 invalid input (manifest, arguments, files).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .card import CardAnnotation, load_card_layout
from .exceptions import ParseError, SkinTrackError, ValidationError
from .imaging import Roi, load_image, roi_mask, save_image, to_grayscale
from .metrics import wrinkle_ratio
from .normalization import ClaheConfig, NormalizationMethod, normalize
from .stats import DEFAULT_ALPHA, PairedSamples, paired_compare

EXIT_OK, EXIT_FATAL, EXIT_INVALID = 0, 1, 2

log = logging.getLogger("skintrack")


class _Invalid(Exception):
    pass


def _floats(text, what):
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise _Invalid(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _pairs(text, what, min_points):
    vals = _floats(text, what)
    if len(vals) % 2 or len(vals) // 2 < min_points:
        raise _Invalid(f"{what}: expected at least {min_points} x,y pairs")
    return tuple(zip(vals[0::2], vals[1::2]))


def _cmd_validate(args):
    from .pipeline.manifest import load_manifest

    m = load_manifest(args.manifest)
    n_sessions = sum(len(v.sessions) for v in m.volunteers)
    print(f"ok: trial {m.trial_id}: {len(m.volunteers)} volunteers, {n_sessions} sessions")
    return EXIT_OK


def _cmd_run(args):
    from .pipeline import emit_csv, emit_svg_plots, load_manifest, run_pipeline

    m = load_manifest(args.manifest)
    methods = [s for s in args.methods.split(",") if s] if args.methods else None
    try:
        m = m.with_config(methods=methods, seed=args.seed, alpha=args.alpha)
    except ValueError as exc:
        raise _Invalid(str(exc)) from None
    out = Path(args.out)
    bundle = run_pipeline(m, out, keep_intermediates=args.keep_intermediates, workers=args.workers)
    files = emit_csv(bundle, out) + emit_svg_plots(bundle, out)
    print(f"trial {bundle.trial_id}: {len(bundle.series)} series, {len(bundle.skipped)} skipped sessions, "
          f"{len(files)} files written to {out}")
    for row in bundle.summary:
        if row.test:
            flag = "significant" if row.significant else "n.s."
            where = f"{row.source}/{row.method}" if row.method else row.source
            print(f"  {row.parameter:<22} {where:<18} p={row.p_value:.4g} ({row.test}, {flag})")
    return EXIT_OK


def _cmd_normalize(args):
    method = NormalizationMethod.parse(args.method)
    img = load_image(args.image)
    corners = CardAnnotation(_pairs(args.card_corners, "--card-corners", 4)) if args.card_corners else None
    layout = load_card_layout(args.card_layout) if args.card_layout else None
    clahe = ClaheConfig(tiles_x=args.tiles[0], tiles_y=args.tiles[1], clip_limit=args.clip_limit)
    out_img = normalize(img, method, clahe=clahe, card_corners=corners, card_layout=layout)
    out = Path(args.out) if args.out else Path(args.image).with_name(f"{Path(args.image).stem}_{method.value}.png")
    save_image(out, out_img)
    print(out)
    return EXIT_OK


def _cmd_wrinkle(args):
    img = load_image(args.image)
    gray = to_grayscale(img)
    mask = roi_mask(img.shape, Roi(_pairs(args.roi, "--roi", 3))) if args.roi else None
    m = wrinkle_ratio(gray, mask)
    print(json.dumps({"sobel_mean": m.sobel_mean, "image_mean": m.image_mean,
                      "wrinkle_ratio": m.wrinkle_ratio, "laplacian_mean": m.laplacian_mean}))
    return EXIT_OK


def _read_two_columns(path):
    base, final = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise ParseError(f"{path}:{line_no}: expected two columns")
            try:
                b, f = float(row[0]), float(row[1])
            except ValueError:
                if line_no == 1:
                    continue  # header
                raise ParseError(f"{path}:{line_no}: non-numeric value") from None
            base.append(b)
            final.append(f)
    return base, final


def _cmd_stats(args):
    base, final = _read_two_columns(args.csv)
    try:
        samples = PairedSamples(base, final, Path(args.csv).stem)
    except ValueError as exc:
        raise _Invalid(f"{args.csv}: {exc}") from None
    r = paired_compare(samples, args.alpha)
    print(json.dumps({"test": r.test_kind.value, "statistic": r.statistic, "p_value": r.p_value,
                      "significant": r.significant, "alpha": r.alpha, "normality_p": r.normality_p, "n": r.n}))
    return EXIT_OK


def _cmd_gen_fixture(args):
    from .pipeline.fixtures import COHORT_ATTENDANCE, FixtureSpec, generate_trial

    spec = FixtureSpec(volunteers=args.volunteers, sessions=args.sessions, size=args.size, seed=args.seed,
                       b_drift=args.b_drift, attendance=COHORT_ATTENDANCE if args.sparse else None)
    print(generate_trial(args.out, spec))
    return EXIT_OK


def _tiles(text):
    try:
        x, y = text.lower().split("x")
        return int(x), int(y)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected COLSxROWS, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="skintrack", description="Smartphone skin colour and wrinkle tracking.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and skipped sessions")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a trial manifest")
    s.add_argument("manifest")
    s.set_defaults(func=_cmd_validate)

    s = sub.add_parser("run", help="process a trial and write CSV tables and SVG charts")
    s.add_argument("manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--methods", help="comma-separated subset of original,histeq,clahe,card")
    s.add_argument("--seed", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--keep-intermediates", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=_cmd_run)

    s = sub.add_parser("normalize", help="normalise one image")
    s.add_argument("image")
    s.add_argument("--method", required=True)
    s.add_argument("--card-corners", help="x1,y1,...,x4,y4 (TL, TR, BR, BL)")
    s.add_argument("--card-layout")
    s.add_argument("--tiles", type=_tiles, default=(4, 4), help="CLAHE grid, e.g. 4x4")
    s.add_argument("--clip-limit", type=int)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_normalize)

    s = sub.add_parser("wrinkle", help="wrinkle metrics of one image")
    s.add_argument("image")
    s.add_argument("--roi", help="polygon x1,y1,x2,y2,...")
    s.set_defaults(func=_cmd_wrinkle)

    s = sub.add_parser("stats", help="normality-gated paired comparison of a two-column CSV")
    s.add_argument("csv")
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    s.set_defaults(func=_cmd_stats)

    s = sub.add_parser("gen-fixture", help="write a synthetic trial")
    s.add_argument("--out", required=True)
    s.add_argument("--volunteers", type=int, default=12)
    s.add_argument("--sessions", type=int, default=10)
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--b-drift", type=float, default=-6.0)
    s.add_argument("--sparse", action="store_true", help="irregular attendance (5 to 10 sessions each)")
    s.set_defaults(func=_cmd_gen_fixture)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (_Invalid, ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SkinTrackError, OSError, ValueError) as exc:
        print(f"fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
