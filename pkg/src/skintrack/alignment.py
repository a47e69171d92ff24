"""Cross-session alignment: descriptor matching, robust transform fit, ROI transfer."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyDescriptorSet, InsufficientMatches, NoConsensus
from .imaging import Roi
from .sift import detect_and_compute
from .validation import check_gray_image

__all__ = [
    "TransformKind",
    "MatchPair",
    "AlignTransform",
    "match_knn",
    "estimate_transform",
    "transfer_roi",
    "align_images",
    "downsample",
]

RANSAC_ITERATIONS = 2000
INLIER_THRESHOLD = 3.0


class TransformKind(str, enum.Enum):
    SIMILARITY = "similarity"
    AFFINE = "affine"

    @property
    def min_samples(self):
        return 2 if self is TransformKind.SIMILARITY else 3


@dataclass(frozen=True)
class MatchPair:
    query_idx: int
    train_idx: int
    distance: float
    ratio: float


@dataclass(frozen=True)
class AlignTransform:
    """2x3 matrix mapping query coordinates into train coordinates."""

    kind: TransformKind
    matrix: np.ndarray
    inlier_count: int = 0
    inlier_rms: float = 0.0

    @classmethod
    def identity(cls, kind=TransformKind.SIMILARITY):
        return cls(TransformKind(kind), np.hstack([np.eye(2), np.zeros((2, 1))]))

    @property
    def scale(self):
        """Geometric-mean scale factor (the uniform scale for a similarity)."""
        return float(np.sqrt(abs(np.linalg.det(self.matrix[:, :2]))))

    @property
    def rotation(self):
        """Rotation angle in radians (for an affine, of the first column)."""
        return float(np.arctan2(self.matrix[1, 0], self.matrix[0, 0]))

    def apply(self, points):
        pts = np.asarray(points, dtype=float)
        return pts @ self.matrix[:, :2].T + self.matrix[:, 2]

    def inverse(self):
        full = np.vstack([self.matrix, [0.0, 0.0, 1.0]])
        inv = np.linalg.inv(full)[:2]
        return AlignTransform(self.kind, inv, self.inlier_count, self.inlier_rms)

    def rescaled(self, factor):
        """Same transform expressed in coordinates multiplied by ``factor``."""
        m = self.matrix.copy()
        m[:, 2] *= factor
        return AlignTransform(self.kind, m, self.inlier_count, self.inlier_rms * factor)


def match_knn(query, train, ratio_threshold=0.75):
    """Two-nearest-neighbour matching with the ratio test, made one-to-one.

    A query descriptor is kept when ``d1 / d2 < ratio_threshold``. Surviving
    candidates are then accepted best-distance-first, skipping any train
    descriptor already taken.
    """
    q = np.asarray(query, dtype=float)
    t = np.asarray(train, dtype=float)
    if q.ndim != 2 or t.ndim != 2 or len(q) == 0 or len(t) == 0:
        raise EmptyDescriptorSet("both descriptor sets must be non-empty")
    d2 = (q**2).sum(1)[:, None] + (t**2).sum(1)[None, :] - 2.0 * q @ t.T
    dist = np.sqrt(np.maximum(d2, 0.0))
    order = np.argsort(dist, axis=1, kind="stable")
    rows = np.arange(len(q))
    best = dist[rows, order[:, 0]]
    if t.shape[0] > 1:
        second = dist[rows, order[:, 1]]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(second > 0, best / second, 1.0)
    else:
        ratio = np.zeros(len(q))
    keep = np.flatnonzero(ratio < ratio_threshold)
    keep = keep[np.lexsort((keep, best[keep]))]
    used = set()
    matches = []
    for i in keep:
        j = int(order[i, 0])
        if j in used:
            continue
        used.add(j)
        matches.append(MatchPair(int(i), j, float(best[i]), float(ratio[i])))
    matches.sort(key=lambda m: m.query_idx)
    return matches


def _fit_similarity(src, dst):
    """Least-squares [[a, -b, tx], [b, a, ty]] mapping src onto dst."""
    n = len(src)
    A = np.zeros((2 * n, 4))
    A[0::2] = np.column_stack([src[:, 0], -src[:, 1], np.ones(n), np.zeros(n)])
    A[1::2] = np.column_stack([src[:, 1], src[:, 0], np.zeros(n), np.ones(n)])
    a, b, tx, ty = np.linalg.lstsq(A, dst.reshape(-1), rcond=None)[0]
    return np.array([[a, -b, tx], [b, a, ty]])


def _fit_affine(src, dst):
    A = np.column_stack([src, np.ones(len(src))])
    return np.linalg.lstsq(A, dst, rcond=None)[0].T


def _minimal_similarity(src, dst):
    """Exact similarities from point pairs, batched: src/dst have shape (H, 2, 2)."""
    zs = src[..., 0] + 1j * src[..., 1]
    zd = dst[..., 0] + 1j * dst[..., 1]
    dz = zs[:, 0] - zs[:, 1]
    ok = np.abs(dz) > 1e-6
    a = np.where(ok, (zd[:, 0] - zd[:, 1]) / np.where(ok, dz, 1), 0)
    t = zd[:, 0] - a * zs[:, 0]
    m = np.stack(
        [np.stack([a.real, -a.imag, t.real], -1), np.stack([a.imag, a.real, t.imag], -1)], axis=1
    )
    return m, ok & (np.abs(a) > 1e-6)


def _minimal_affine(src, dst):
    A = np.concatenate([src, np.ones(src.shape[:2] + (1,))], axis=2)
    det = np.linalg.det(A)
    ok = np.abs(det) > 1e-6
    A[~ok] = np.eye(3)
    m = np.linalg.solve(A, dst)
    return np.swapaxes(m, 1, 2), ok


def _residuals(matrices, src, dst):
    proj = np.einsum("hij,nj->hni", matrices[:, :, :2], src) + matrices[:, None, :, 2]
    return np.linalg.norm(proj - dst[None], axis=2)


def _draw_samples(rng, n, k, count):
    """``count`` index sets of ``k`` distinct values in ``0..n-1``; rows with repeats are redrawn."""
    samples = rng.integers(0, n, size=(count, k))
    while True:
        srt = np.sort(samples, axis=1)
        bad = np.flatnonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))
        if bad.size == 0:
            return samples
        samples[bad] = rng.integers(0, n, size=(bad.size, k))


def estimate_transform(
    matches, kps_q, kps_t, kind=TransformKind.SIMILARITY, seed=0,
    max_iterations=RANSAC_ITERATIONS, threshold=INLIER_THRESHOLD,
):
    """Seeded RANSAC fit of a transform mapping query keypoints onto train keypoints.

    Hypotheses come from minimal samples drawn by ``numpy.random.default_rng(seed)``
    (rows containing a repeated index are redrawn).
    The best consensus set (most inliers, then smallest inlier error) is refit
    by least squares and its inliers recomputed until they stop changing.
    """
    kind = TransformKind(kind)
    k = kind.min_samples
    if len(matches) < k:
        raise InsufficientMatches(f"{kind.value} needs at least {k} matches, got {len(matches)}")
    src = np.array([[kps_q[m.query_idx].x, kps_q[m.query_idx].y] for m in matches], dtype=float)
    dst = np.array([[kps_t[m.train_idx].x, kps_t[m.train_idx].y] for m in matches], dtype=float)
    n = len(src)
    rng = np.random.default_rng(seed)
    samples = _draw_samples(rng, n, k, max_iterations)
    minimal = _minimal_similarity if kind is TransformKind.SIMILARITY else _minimal_affine

    best_count, best_cost, best_mask = -1, np.inf, None
    for start in range(0, max_iterations, 500):
        chunk = samples[start : start + 500]
        mats, ok = minimal(src[chunk], dst[chunk])
        res = _residuals(mats, src, dst)
        inl = (res <= threshold) & ok[:, None]
        counts = inl.sum(1)
        costs = np.where(inl, res**2, threshold**2).sum(1)
        order = np.lexsort((np.arange(len(chunk)), costs, -counts))
        h = order[0]
        if counts[h] > best_count or (counts[h] == best_count and costs[h] < best_cost):
            best_count, best_cost, best_mask = int(counts[h]), float(costs[h]), inl[h]

    if best_mask is None or best_count < k or (best_count < 0.5 * n and best_count < 8):
        raise NoConsensus(f"best consensus {max(best_count, 0)} of {n} matches")

    fit = _fit_similarity if kind is TransformKind.SIMILARITY else _fit_affine
    mask = best_mask
    for _ in range(10):
        matrix = fit(src[mask], dst[mask])
        res = _residuals(matrix[None], src, dst)[0]
        new_mask = res <= threshold
        if new_mask.sum() < k or np.array_equal(new_mask, mask):
            break
        mask = new_mask
    res = _residuals(matrix[None], src, dst)[0]
    rms = float(np.sqrt(np.mean(res[mask] ** 2)))
    return AlignTransform(kind, matrix, int(mask.sum()), rms)


def transfer_roi(roi, t):
    """Map every ROI vertex through the transform."""
    return Roi(tuple(map(tuple, t.apply(roi.vertices))))


def downsample(gray, factor):
    """Block-mean downsampling by an integer factor (remainder rows/cols dropped).

    Continuous coordinates scale exactly by ``1 / factor``.
    """
    gray = check_gray_image(gray)
    if factor <= 1:
        return gray
    h, w = (gray.shape[0] // factor) * factor, (gray.shape[1] // factor) * factor
    blocks = gray[:h, :w].reshape(h // factor, factor, w // factor, factor).astype(float)
    return np.floor(blocks.mean(axis=(1, 3)) + 0.5).astype(np.uint8)


def align_images(reference, session, kind=TransformKind.SIMILARITY, ratio_threshold=0.75,
                 seed=0, max_keypoints=300, max_side=None, reference_features=None):
    """Transform mapping ``reference`` coordinates into ``session`` coordinates.

    When ``max_side`` is given, both images are block-downsampled by the
    smallest integer factor bringing their longer side to at most
    ``max_side`` before features are computed; the transform is scaled back.
    ``reference_features`` may carry a cached ``(keypoints, descriptors)``
    for the (already downsampled) reference.
    """
    reference = check_gray_image(reference)
    session = check_gray_image(session)
    factor = 1
    if max_side:
        factor = max(1, int(np.ceil(max(reference.shape + session.shape) / max_side)))
    if reference_features is None:
        reference_features = detect_and_compute(downsample(reference, factor), max_keypoints)
    kq, dq = reference_features
    kt, dt = detect_and_compute(downsample(session, factor), max_keypoints)
    if len(kq) == 0 or len(kt) == 0:
        raise EmptyDescriptorSet("no keypoints found in one of the images")
    matches = match_knn(dq, dt, ratio_threshold)
    t = estimate_transform(matches, kq, kt, kind, seed)
    return t.rescaled(factor) if factor > 1 else t
