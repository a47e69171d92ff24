import numpy as np
import pytest
from scipy.ndimage import gaussian_filter
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from conftest import make_cast_card_image
from skintrack.alignment import AlignTransform
from skintrack.estimators import (
    ClaheEqualizer,
    ColourCardNormalizer,
    SessionAligner,
    SkinColourExtractor,
    WrinkleRatio,
    YHistogramEqualizer,
)
from skintrack.imaging import Roi
from skintrack.metrics import skin_colour
from skintrack.normalization import ClaheConfig, clahe_y, histogram_equalize_y


def batch(rng, n=3, size=32):
    return rng.integers(0, 256, (n, size, size, 3), dtype=np.uint8)


def test_equalizers_match_functions(rng):
    X = batch(rng)
    assert np.array_equal(YHistogramEqualizer().fit_transform(X)[1], histogram_equalize_y(X[1]))
    out = ClaheEqualizer(2, 2, 10).fit_transform(list(X))
    assert isinstance(out, list)
    assert np.array_equal(out[2], clahe_y(X[2], ClaheConfig(2, 2, 10)))


def test_clone_and_params():
    est = ClaheEqualizer(tiles_x=8, clip_limit=5)
    assert clone(est).get_params() == {"tiles_x": 8, "tiles_y": 4, "clip_limit": 5}
    assert SessionAligner(seed=4).get_params()["seed"] == 4


def test_pipeline_composition(rng):
    roi = Roi.rectangle(0, 0, 16, 16)
    X = batch(rng)
    feats = make_pipeline(YHistogramEqualizer(), SkinColourExtractor(roi)).fit_transform(X)
    assert feats.shape == (3, 3)
    assert np.allclose(feats[0], skin_colour(X[0], roi, "histeq").as_array())


def test_card_normalizer():
    clean, img, corners, layout, skin, _ = make_cast_card_image(8)
    est = ColourCardNormalizer(layout)
    with pytest.raises(NotFittedError):
        est.transform([img])
    out = est.fit_transform([img], corners=[corners])
    assert len(est.deltas_) == 1
    before = SkinColourExtractor(skin).fit([clean]).transform([clean])
    after = SkinColourExtractor(skin).fit(out).transform(out)
    assert np.abs(after - before).max() <= 2
    with pytest.raises(ValueError):
        est.transform([img, img])
    with pytest.raises(ValueError):
        ColourCardNormalizer(layout).fit([img])


def test_extractor_rejects_card():
    with pytest.raises(ValueError):
        SkinColourExtractor(Roi.rectangle(0, 0, 4, 4), method="card").fit(None)


def test_wrinkle_ratio_rows(rng):
    X = batch(rng, 2)
    rows = WrinkleRatio(Roi.rectangle(2, 2, 20, 20)).fit_transform(X)
    assert rows.shape == (2, 4)
    assert np.allclose(rows[:, 2], rows[:, 0] / rows[:, 1])


def test_session_aligner():
    rng = np.random.default_rng(0)
    g = (gaussian_filter(rng.normal(size=(128, 128)), 2) * 500 + 128).clip(0, 255).astype(np.uint8)
    img = np.repeat(g[..., None], 3, axis=2)
    aligner = SessionAligner()
    with pytest.raises(NotFittedError):
        aligner.predict([img])
    (t,) = aligner.fit([img]).predict([img])
    assert isinstance(t, AlignTransform)
    assert np.allclose(t.matrix, AlignTransform.identity().matrix, atol=1e-3)
