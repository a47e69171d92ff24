import json
from pathlib import Path

import numpy as np
import pytest
from scipy.ndimage import affine_transform, gaussian_filter

from conftest import synthetic_correspondences
from skintrack.alignment import (
    AlignTransform,
    MatchPair,
    TransformKind,
    align_images,
    downsample,
    estimate_transform,
    match_knn,
    transfer_roi,
)
from skintrack.exceptions import EmptyDescriptorSet, InsufficientMatches, NoConsensus
from skintrack.imaging import Roi, load_image, to_grayscale
from skintrack.sift import Keypoint, detect_and_compute


def texture(seed, size=192):
    rng = np.random.default_rng(seed)
    return gaussian_filter(rng.normal(size=(size, size)), 2.5) * 500 + 128


def warp(field, matrix):
    """Resample so that the point p of ``field`` lands at ``matrix @ [p, 1]`` (pixel-centre coordinates)."""
    inv = np.linalg.inv(np.vstack([matrix, [0, 0, 1]]))
    m_rc = inv[:2, :2][::-1, ::-1]
    t_rc = inv[:2, 2][::-1]
    offset = m_rc @ np.array([0.5, 0.5]) + t_rc - 0.5
    return affine_transform(field, m_rc, offset, order=3, mode="nearest").clip(0, 255).astype(np.uint8)


def similarity(angle_deg, scale, tx, ty, centre):
    t = np.deg2rad(angle_deg)
    lin = scale * np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    c = np.array([centre, centre])
    return np.hstack([lin, (c - lin @ c + [tx, ty])[:, None]])


class TestMatching:
    def test_self_match(self, rng):
        desc = rng.normal(size=(40, 128))
        matches = match_knn(desc, desc, 0.75)
        assert [(m.query_idx, m.train_idx) for m in matches] == [(i, i) for i in range(40)]
        assert all(m.distance == pytest.approx(0, abs=1e-6) for m in matches)

    def test_duplicate_train_rejected(self):
        train = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0, 1.0]])
        assert match_knn(np.array([[1.0, 0.1, 0]]), train, 0.75) == []

    def test_ratio_threshold(self):
        train = np.array([[0.0, 0], [10.0, 0]])
        query = np.array([[4.0, 0]])  # d1 / d2 = 4 / 6
        assert len(match_knn(query, train, 0.7)) == 1
        assert match_knn(query, train, 0.6) == []

    def test_one_to_one(self):
        train = np.array([[0.0, 0], [100.0, 0]])
        query = np.array([[1.0, 0], [2.0, 0]])
        matches = match_knn(query, train, 0.9)
        assert [(m.query_idx, m.train_idx) for m in matches] == [(0, 0)]

    def test_empty(self):
        with pytest.raises(EmptyDescriptorSet):
            match_knn(np.zeros((0, 128)), np.ones((3, 128)))

    def test_known_correspondences(self):
        ref = texture(1)
        t = similarity(8, 1.05, 4, -3, 96)
        sess = warp(ref, t)
        kq, dq = detect_and_compute(ref.clip(0, 255).astype(np.uint8))
        kt, dt = detect_and_compute(sess)
        matches = match_knn(dq, dt, 0.75)
        src = np.array([[kq[m.query_idx].x, kq[m.query_idx].y] for m in matches])
        dst = np.array([[kt[m.train_idx].x, kt[m.train_idx].y] for m in matches])
        err = np.hypot(*(src @ t[:, :2].T + t[:, 2] - dst).T)
        assert len(matches) >= 20
        assert (err <= 3).mean() >= 0.9


class TestEstimate:
    def test_identity(self):
        kps = [Keypoint(float(x), float(y), 1, 0, 1) for x, y in np.random.default_rng(0).uniform(0, 100, (20, 2))]
        matches = [MatchPair(i, i, 0.0, 0.1) for i in range(20)]
        for kind in TransformKind:
            t = estimate_transform(matches, kps, kps, kind)
            assert np.allclose(t.matrix, AlignTransform.identity().matrix, atol=1e-6)
            assert t.inlier_rms < 1e-6 and t.inlier_count == 20

    @pytest.mark.parametrize("seed", range(10))
    def test_rotation_scale_with_outliers(self, seed):
        matches, kq, kt, _ = synthetic_correspondences(seed)
        t = estimate_transform(matches, kq, kt, TransformKind.SIMILARITY, seed=seed)
        assert abs(np.rad2deg(t.rotation) - 15) <= 0.5
        assert abs(t.scale / 1.1 - 1) <= 0.01

    def test_affine_recovers_shear(self, rng):
        true = np.array([[1.1, 0.2, 5.0], [-0.1, 0.9, -3.0]])
        src = rng.uniform(0, 100, (30, 2))
        dst = src @ true[:, :2].T + true[:, 2]
        kq = [Keypoint(*p, 1, 0, 1) for p in src]
        kt = [Keypoint(*p, 1, 0, 1) for p in dst]
        t = estimate_transform([MatchPair(i, i, 0, 0.1) for i in range(30)], kq, kt, "affine")
        assert np.allclose(t.matrix, true, atol=1e-6)

    def test_deterministic(self):
        matches, kq, kt, _ = synthetic_correspondences(3, outlier_frac=0.5)
        a = estimate_transform(matches, kq, kt, seed=9)
        b = estimate_transform(matches, kq, kt, seed=9)
        assert np.array_equal(a.matrix, b.matrix)

    def test_insufficient(self):
        kps = [Keypoint(1.0, 1.0, 1, 0, 1)]
        with pytest.raises(InsufficientMatches):
            estimate_transform([MatchPair(0, 0, 0, 0.1)], kps, kps, TransformKind.AFFINE)

    def test_no_consensus(self, rng):
        n = 30
        kq = [Keypoint(*p, 1, 0, 1) for p in rng.uniform(0, 500, (n, 2))]
        kt = [Keypoint(*p, 1, 0, 1) for p in rng.uniform(0, 500, (n, 2))]
        with pytest.raises(NoConsensus):
            estimate_transform([MatchPair(i, i, 0, 0.1) for i in range(n)], kq, kt, "affine")


class TestTransfer:
    square = Roi(((10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0)))

    def test_identity(self):
        assert np.array_equal(transfer_roi(self.square, AlignTransform.identity()).vertices, self.square.vertices)

    def test_translation(self):
        t = AlignTransform(TransformKind.SIMILARITY, np.array([[1.0, 0, 10], [0, 1, 0]]))
        assert np.allclose(transfer_roi(self.square, t).vertices, np.array(self.square.vertices) + [10, 0])

    def test_inverse_roundtrip(self):
        t = AlignTransform(TransformKind.AFFINE, np.array([[1.1, 0.3, 7], [-0.2, 0.8, -4]]))
        back = transfer_roi(transfer_roi(self.square, t), t.inverse())
        assert np.allclose(back.vertices, self.square.vertices, atol=1e-6)


class TestAlignImages:
    def test_self_alignment(self):
        img = texture(2).clip(0, 255).astype(np.uint8)
        t = align_images(img, img)
        assert np.allclose(t.matrix, AlignTransform.identity().matrix, atol=1e-3)

    def test_downsample_coordinates(self):
        img = np.arange(36, dtype=np.uint8).reshape(6, 6)
        assert downsample(img, 2).shape == (3, 3)
        assert downsample(img, 2)[0, 0] == round((0 + 1 + 6 + 7) / 4)

    def test_downsampled_alignment(self):
        ref = texture(6, 384)
        t = similarity(-5, 0.97, 6, 2, 192)
        sess = warp(ref, t)
        est = align_images(ref.clip(0, 255).astype(np.uint8), sess, max_side=192)
        corners = np.array([[100, 100], [280, 100], [280, 280], [100, 280]], float)
        err = np.hypot(*(est.apply(corners) - (corners @ t[:, :2].T + t[:, 2])).T)
        assert err.max() <= 2.0

    def test_fixture_temple_sessions(self, small_trial):
        doc = json.loads(Path(small_trial).read_text())
        base = Path(small_trial).parent
        vol = doc["volunteers"][0]
        temples = [s for s in vol["sessions"] if s["site"] == "temple"]
        ref = temples[0]
        ref_img = to_grayscale(load_image(base / ref["image"]))
        ref_warp = np.vstack([ref["fixture_transform"], [0, 0, 1]])
        size = ref_img.shape[0]
        probe = np.array([[0.3, 0.3], [0.7, 0.3], [0.7, 0.7], [0.3, 0.7]]) * size
        for s in temples[1:]:
            truth = (np.vstack([s["fixture_transform"], [0, 0, 1]]) @ np.linalg.inv(ref_warp))[:2]
            est = align_images(ref_img, to_grayscale(load_image(base / s["image"])), max_side=256)
            err = np.hypot(*(est.apply(probe) - (probe @ truth[:, :2].T + truth[:, 2])).T)
            assert err.max() <= 1.5, s["date"]
