import numpy as np
import pytest

from skintrack.pipeline.fixtures import FixtureSpec, generate_trial

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_trial(tmp_path_factory):
    """Four volunteers, five sessions, 256 px images."""
    out = tmp_path_factory.mktemp("small_trial")
    return generate_trial(out, FixtureSpec(volunteers=4, sessions=5, size=256, seed=7))


def make_cast_card_image(seed, size=96, cast_scale=6.0):
    """Skin-like image with a 3x4 card, plus a copy under a uniform LAB cast.

    Returns ``(clean, cast_img, corners, layout, skin_roi, cast)``. Colours are
    kept mid-gamut so the cast never clips.
    """
    from skintrack.card import CardLayout
    from skintrack.imaging import Roi, lab_to_rgb, rgb_to_lab

    rng = np.random.default_rng(seed)
    patch_rgb = rng.integers(70, 190, (3, 4, 3)).astype(np.uint8)
    reference = rgb_to_lab(patch_rgb)
    layout = CardLayout(3, 4, reference, margin=0.5, key_patch=(1, 3))

    clean = np.empty((size, size, 3), np.uint8)
    base = np.array([185, 140, 120]) + rng.integers(-15, 15, 3)
    noise = rng.integers(-6, 7, (size, size, 1))
    clean[:] = np.clip(base + noise, 0, 255)
    x0, y0, cw, ch = size // 2, size // 2, 12, 10
    for r in range(3):
        for c in range(4):
            clean[y0 + r * ch:y0 + (r + 1) * ch, x0 + c * cw:x0 + (c + 1) * cw] = patch_rgb[r, c]
    corners = ((x0, y0), (x0 + 4 * cw, y0), (x0 + 4 * cw, y0 + 3 * ch), (x0, y0 + 3 * ch))

    cast = rng.uniform(-cast_scale, cast_scale, 3)
    cast_img = lab_to_rgb(rgb_to_lab(clean) + cast)
    skin_roi = Roi.rectangle(4, 4, size // 2 - 4, size // 2 - 4)
    return clean, cast_img, corners, layout, skin_roi, cast


def synthetic_correspondences(seed, n=60, angle_deg=15.0, scale=1.1, outlier_frac=0.3, noise=0.5):
    """Keypoints and matches for a known similarity, with a share of random outliers.

    Returns ``(matches, kps_q, kps_t, true_matrix)``.
    """
    from skintrack.alignment import MatchPair
    from skintrack.sift import Keypoint

    rng = np.random.default_rng(seed)
    theta = np.deg2rad(angle_deg)
    lin = scale * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shift = rng.uniform(-20, 20, 2)
    src = rng.uniform(0, 200, (n, 2))
    dst = src @ lin.T + shift + rng.normal(0, noise, (n, 2))
    outliers = rng.choice(n, int(round(outlier_frac * n)), replace=False)
    dst[outliers] = rng.uniform(0, 250, (len(outliers), 2))
    kps_q = [Keypoint(float(x), float(y), 2.0, 0.0, 1.0) for x, y in src]
    kps_t = [Keypoint(float(x), float(y), 2.0, 0.0, 1.0) for x, y in dst]
    matches = [MatchPair(i, i, 0.0, 0.5) for i in range(n)]
    return matches, kps_q, kps_t, np.hstack([lin, shift[:, None]])


def line_image(n_lines, size=96, seed=0):
    """Smooth skin-like gradient with ``n_lines`` evenly spaced dark diagonal lines."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    img = 150 + 30 * xx / size + 10 * yy / size + rng.normal(0, 0.3, (size, size))
    for k in range(n_lines):
        offset = (k + 1) * size / (n_lines + 1) - size / 2
        dist = np.abs((xx - yy) / np.sqrt(2) - offset)
        img -= 60 * np.exp(-(dist**2) / 2.0)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)
