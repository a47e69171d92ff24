import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import gaussian_filter, rotate

from conftest import line_image, make_cast_card_image
from skintrack.alignment import AlignTransform, TransformKind
from skintrack.exceptions import EmptyRoi, ImageTooSmall, MissingAnnotation, ZeroMeanImage
from skintrack.imaging import Roi, roi_mask
from skintrack.metrics import (
    laplacian_magnitude,
    skin_colour,
    sobel_combined,
    sobel_x,
    sobel_y,
    wrinkle_for_session,
    wrinkle_ratio,
)
from skintrack.normalization import normalize

gray = arrays(np.uint8, st.tuples(st.integers(3, 16), st.integers(3, 16)))


def hand_filter(img, kernel):
    """Direct 3x3 correlation with edge replication, |.| saturated to 255."""
    p = np.pad(img.astype(int), 1, mode="edge")
    h, w = img.shape
    out = np.zeros((h, w), int)
    for r in range(h):
        for c in range(w):
            out[r, c] = abs(int((p[r:r + 3, c:c + 3] * kernel).sum()))
    return np.minimum(out, 255).astype(np.uint8)


SX = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])
LAP = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]])


class TestFilters:
    def test_constant(self):
        img = np.full((8, 8), 77, np.uint8)
        for f in (sobel_x, sobel_y, sobel_combined, laplacian_magnitude):
            assert not f(img).any()

    def test_vertical_step(self):
        img = np.tile(np.array([0, 0, 255, 255], np.uint8), (4, 1))
        gx = sobel_x(img)
        # raw response next to the step is 4 * 255 = 1020
        assert (gx[:, 1:3] == 255).all() and (gx[:, [0, 3]] == 0).all()
        assert not sobel_y(img).any()
        assert np.array_equal(sobel_combined(img), gx)

    def test_ramp_laplacian(self):
        img = np.tile(np.arange(10, dtype=np.uint8), (6, 1))
        assert not laplacian_magnitude(img)[:, 1:-1].any()

    def test_single_bright_pixel(self):
        img = np.zeros((5, 5), np.uint8)
        img[2, 2] = 255
        lap = laplacian_magnitude(img)
        assert lap[2, 2] == 255
        assert lap[1, 2] == lap[3, 2] == lap[2, 1] == lap[2, 3] == 255
        assert lap[0, 0] == 0

    @settings(max_examples=50, deadline=None)
    @given(gray)
    def test_against_hand_convolution(self, img):
        assert np.array_equal(sobel_x(img), hand_filter(img, SX))
        assert np.array_equal(sobel_y(img), hand_filter(img, SX.T))
        assert np.array_equal(laplacian_magnitude(img), hand_filter(img, LAP))

    @settings(max_examples=50, deadline=None)
    @given(gray)
    def test_transpose_symmetry(self, img):
        assert np.array_equal(sobel_x(img.T), sobel_y(img).T)

    @settings(max_examples=50, deadline=None)
    @given(gray)
    def test_or_semantics(self, img):
        gx, gy, g = sobel_x(img), sobel_y(img), sobel_combined(img)
        assert np.array_equal(g == 0, (gx == 0) & (gy == 0))
        assert np.array_equal(g, gx | gy)

    def test_too_small(self):
        with pytest.raises(ImageTooSmall):
            sobel_x(np.zeros((2, 5), np.uint8))


class TestWrinkleRatio:
    def test_constant(self):
        m = wrinkle_ratio(np.full((10, 10), 128, np.uint8))
        assert (m.sobel_mean, m.image_mean, m.wrinkle_ratio) == (0.0, 128.0, 0.0)

    def test_black(self):
        with pytest.raises(ZeroMeanImage):
            wrinkle_ratio(np.zeros((10, 10), np.uint8))

    def test_empty_mask(self):
        with pytest.raises(EmptyRoi):
            wrinkle_ratio(np.ones((10, 10), np.uint8), np.zeros((10, 10), bool))

    def test_lines_increase_ratio(self):
        assert wrinkle_ratio(line_image(5)).wrinkle_ratio > wrinkle_ratio(line_image(0)).wrinkle_ratio

    def test_ladder_strictly_increasing(self):
        values = [wrinkle_ratio(line_image(k)).wrinkle_ratio for k in (0, 2, 4, 6, 8)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_ratio_definition(self, rng):
        img = rng.integers(1, 256, (20, 20), dtype=np.uint8)
        m = wrinkle_ratio(img)
        assert m.wrinkle_ratio == m.sobel_mean / m.image_mean

    def test_intensity_scaling(self, rng):
        img = rng.integers(0, 128, (20, 20), dtype=np.uint8) * 2
        assert wrinkle_ratio(img // 2).image_mean == wrinkle_ratio(img).image_mean / 2

    def test_duplicate_processing(self):
        img = line_image(3)
        assert wrinkle_ratio(img) == wrinkle_ratio(img.copy())


class TestWrinkleForSession:
    roi = Roi.rectangle(30, 30, 130, 130)

    def rgb(self, gray_img):
        return np.repeat(gray_img[..., None], 3, axis=2)

    def test_identity_equals_manual_crop(self):
        g = line_image(6, size=160)
        m = wrinkle_for_session(self.rgb(g), self.roi, AlignTransform.identity())
        manual = wrinkle_ratio(g[30:130, 30:130])
        assert m.wrinkle_ratio == pytest.approx(manual.wrinkle_ratio, rel=1e-12)

    def test_copy_identical(self):
        img = self.rgb(line_image(6, size=160))
        t = AlignTransform.identity()
        assert wrinkle_for_session(img, self.roi, t) == wrinkle_for_session(img.copy(), self.roi, t)

    def rotation(self, deg, c=80.0):
        theta = np.deg2rad(-deg)  # scipy's positive angle turns the picture counter-clockwise
        lin = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        return AlignTransform(TransformKind.SIMILARITY, np.hstack([lin, (np.array([c, c]) - lin @ [c, c])[:, None]]))

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_rotated_session(self, seed):
        rng = np.random.default_rng(seed)
        g = (150 + gaussian_filter(rng.normal(size=(160, 160)), 1.5) * 150).clip(0, 255).astype(np.uint8)
        ref = wrinkle_for_session(self.rgb(g), self.roi, AlignTransform.identity())
        rot = rotate(g.astype(float), 10, reshape=False, order=3, mode="nearest").clip(0, 255).astype(np.uint8)
        m = wrinkle_for_session(self.rgb(rot), self.roi, self.rotation(10))
        assert m.wrinkle_ratio == pytest.approx(ref.wrinkle_ratio, rel=0.10)

    def test_or_combination_is_orientation_sensitive(self):
        # 45 degree lines give |Gx| = |Gy| so the OR adds nothing; turned 10 degrees it does
        g = line_image(6, size=160)
        ref = wrinkle_for_session(self.rgb(g), self.roi, AlignTransform.identity())
        rot = rotate(g.astype(float), 10, reshape=False, order=3, mode="nearest").clip(0, 255).astype(np.uint8)
        m = wrinkle_for_session(self.rgb(rot), self.roi, self.rotation(10))
        assert m.wrinkle_ratio > 1.2 * ref.wrinkle_ratio

    def test_roi_outside(self):
        t = AlignTransform(TransformKind.SIMILARITY, np.array([[1.0, 0, 1000], [0, 1, 0]]))
        with pytest.raises(EmptyRoi):
            wrinkle_for_session(self.rgb(line_image(2, size=160)), self.roi, t)


class TestSkinColour:
    def test_white(self):
        s = skin_colour(np.full((10, 10, 3), 255, np.uint8), Roi.rectangle(0, 0, 10, 10))
        assert np.allclose(s.as_array(), [100, 0, 0], atol=0.01) and s.pixel_count == 100

    def test_disjoint_rois_on_constant(self):
        img = np.zeros((20, 20, 3), np.uint8) + np.array([180, 130, 110], np.uint8)
        a = skin_colour(img, Roi.rectangle(0, 0, 5, 5))
        b = skin_colour(img, Roi.rectangle(10, 10, 20, 20))
        # equal up to float summation order
        assert np.allclose(a.as_array(), b.as_array(), rtol=0, atol=1e-12)

    def test_card_on_matching_image_equals_original(self):
        clean, _, corners, layout, skin, _ = make_cast_card_image(1)
        base = skin_colour(clean, skin).as_array()
        card = skin_colour(clean, skin, "card", card_corners=corners, card_layout=layout).as_array()
        assert np.abs(card - base).max() <= 1.5

    @pytest.mark.parametrize("method", ["original", "histeq", "clahe", "card"])
    def test_matches_full_normalisation(self, method):
        _, img, corners, layout, skin, _ = make_cast_card_image(5)
        kw = {"card_corners": corners, "card_layout": layout} if method == "card" else {}
        full = normalize(img, method, **kw)
        expected = skin_colour(full, skin).as_array()
        got = skin_colour(img, skin, method, **kw).as_array()
        assert np.allclose(got, expected, atol=1e-9)

    def test_card_needs_annotation(self):
        clean, _, _, layout, skin, _ = make_cast_card_image(1)
        with pytest.raises(MissingAnnotation):
            skin_colour(clean, skin, "card", card_layout=layout)

    def test_empty_roi(self):
        with pytest.raises(EmptyRoi):
            skin_colour(np.zeros((10, 10, 3), np.uint8), Roi.rectangle(50, 50, 60, 60))

    def test_mask_count(self):
        img = np.zeros((10, 10, 3), np.uint8)
        roi = Roi(((0, 0), (10, 0), (0, 10)))
        assert skin_colour(img, roi).pixel_count == roi_mask(img.shape, roi).sum()
