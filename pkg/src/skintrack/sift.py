"""Scale-invariant keypoints and 128-d gradient-histogram descriptors.

A difference-of-Gaussians pyramid is searched for 3x3x3 extrema, which are
refined to sub-pixel accuracy by a quadratic fit, filtered for low contrast
and edge response, and given one or more dominant gradient orientations.
Descriptors are 4x4 spatial cells of 8 orientation bins sampled in the
keypoint's rotated frame.

Coordinates follow the :class:`~skintrack.imaging.Roi` convention: the centre
of pixel (row, col) is at (col + 0.5, row + 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .exceptions import ImageTooSmall
from .validation import check_gray_image

__all__ = ["Keypoint", "detect_keypoints", "compute_descriptors", "detect_and_compute"]

SIGMA0 = 1.6
INPUT_BLUR = 0.5
INTERVALS = 3
CONTRAST_THRESHOLD = 0.04
EDGE_RATIO = 10.0
BORDER = 5
MAX_REFINE_STEPS = 5
ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_SIGMA_FACTOR = 1.5
DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE = 3.0
DESC_CLAMP = 0.2
MIN_SIZE = 32


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float
    octave: int = 0
    layer: float = 1.0


class _Pyramid:
    def __init__(self, gray):
        img = gray.astype(np.float32) / np.float32(255.0)
        h, w = img.shape
        self.n_octaves = max(1, int(np.floor(np.log2(min(h, w)))) - 3)
        sigmas = SIGMA0 * 2.0 ** (np.arange(INTERVALS + 3) / INTERVALS)
        self.layer_sigmas = sigmas
        base = gaussian_filter(img, np.sqrt(SIGMA0**2 - INPUT_BLUR**2), mode="nearest")
        self.gauss = []
        self.dog = []
        for o in range(self.n_octaves):
            if o > 0:
                base = self.gauss[-1][INTERVALS][::2, ::2]
            layers = [base]
            for k in range(1, INTERVALS + 3):
                step = np.sqrt(sigmas[k] ** 2 - sigmas[k - 1] ** 2)
                layers.append(gaussian_filter(layers[-1], step, mode="nearest"))
            stack = np.stack(layers)
            self.gauss.append(stack)
            self.dog.append(stack[1:] - stack[:-1])
        self._grad = {}

    def gradients(self, octave, layer):
        key = (octave, layer)
        if key not in self._grad:
            g = np.pad(self.gauss[octave][layer], 1, mode="edge")
            dx = g[1:-1, 2:] - g[1:-1, :-2]
            dy = g[2:, 1:-1] - g[:-2, 1:-1]
            self._grad[key] = (np.hypot(dx, dy), np.arctan2(dy, dx))
        return self._grad[key]


def _derivatives(d, s, r, c):
    """Gradient and Hessian of the DoG stack at integer positions (batched)."""
    v = d[s, r, c]
    g = 0.5 * np.stack(
        [d[s, r, c + 1] - d[s, r, c - 1], d[s, r + 1, c] - d[s, r - 1, c], d[s + 1, r, c] - d[s - 1, r, c]],
        axis=-1,
    )
    dxx = d[s, r, c + 1] + d[s, r, c - 1] - 2 * v
    dyy = d[s, r + 1, c] + d[s, r - 1, c] - 2 * v
    dss = d[s + 1, r, c] + d[s - 1, r, c] - 2 * v
    dxy = 0.25 * (d[s, r + 1, c + 1] - d[s, r + 1, c - 1] - d[s, r - 1, c + 1] + d[s, r - 1, c - 1])
    dxs = 0.25 * (d[s + 1, r, c + 1] - d[s + 1, r, c - 1] - d[s - 1, r, c + 1] + d[s - 1, r, c - 1])
    dys = 0.25 * (d[s + 1, r + 1, c] - d[s + 1, r - 1, c] - d[s - 1, r + 1, c] + d[s - 1, r - 1, c])
    hess = np.stack(
        [np.stack([dxx, dxy, dxs], -1), np.stack([dxy, dyy, dys], -1), np.stack([dxs, dys, dss], -1)], axis=-2
    )
    return v, g, hess


def _refine(d, s, r, c):
    """Quadratic sub-pixel refinement; returns surviving candidates and offsets."""
    n_layers, h, w = d.shape
    alive = np.ones(s.shape, dtype=bool)
    converged = np.zeros(s.shape, dtype=bool)
    offset = np.zeros(s.shape + (3,))
    value = np.zeros(s.shape)
    grad = np.zeros(s.shape + (3,))
    for _ in range(MAX_REFINE_STEPS):
        idx = np.flatnonzero(alive & ~converged)
        if idx.size == 0:
            break
        v, g, hess = _derivatives(d, s[idx], r[idx], c[idx])
        det = np.linalg.det(hess)
        ok = np.abs(det) > 1e-12
        off = np.zeros((idx.size, 3))
        off[ok] = -np.linalg.solve(hess[ok], g[ok][..., None])[..., 0]
        alive[idx[~ok]] = False
        small = ok & np.all(np.abs(off) < 0.5, axis=1)
        done = idx[small]
        converged[done] = True
        offset[done] = off[small]
        value[done] = v[small]
        grad[done] = g[small]
        move = idx[ok & ~small]
        step = np.round(off[ok & ~small]).astype(int)
        c[move] += step[:, 0]
        r[move] += step[:, 1]
        s[move] += step[:, 2]
        bad = (
            (s[move] < 1)
            | (s[move] > n_layers - 2)
            | (r[move] < BORDER)
            | (r[move] >= h - BORDER)
            | (c[move] < BORDER)
            | (c[move] >= w - BORDER)
        )
        alive[move[bad]] = False
    keep = alive & converged
    contrast = value + 0.5 * np.einsum("ij,ij->i", grad, offset)
    return keep, offset, contrast


def _edge_ok(d, s, r, c):
    v = d[s, r, c]
    dxx = d[s, r, c + 1] + d[s, r, c - 1] - 2 * v
    dyy = d[s, r + 1, c] + d[s, r - 1, c] - 2 * v
    dxy = 0.25 * (d[s, r + 1, c + 1] - d[s, r + 1, c - 1] - d[s, r - 1, c + 1] + d[s, r - 1, c - 1])
    tr = dxx + dyy
    det = dxx * dyy - dxy**2
    return (det > 0) & (tr**2 * EDGE_RATIO < (EDGE_RATIO + 1) ** 2 * det)


def _neighbourhood_extrema(d):
    """Max and min over the 3x3x3 neighbourhood of every interior DoG layer."""
    p = np.pad(d, ((0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = d.shape[1:]
    hi = p[:, 1:-1, 1:-1].copy()
    lo = hi.copy()
    for dr in (0, 1, 2):
        for dc in (0, 1, 2):
            view = p[:, dr : dr + h, dc : dc + w]
            np.maximum(hi, view, out=hi)
            np.minimum(lo, view, out=lo)
    return (
        np.maximum(np.maximum(hi[:-2], hi[1:-1]), hi[2:]),
        np.minimum(np.minimum(lo[:-2], lo[1:-1]), lo[2:]),
    )


def _candidates(pyr):
    """Refined extrema of every octave as (octave, layer, row, col, response) arrays."""
    threshold = 0.5 * CONTRAST_THRESHOLD / INTERVALS
    found = []
    for o, d in enumerate(pyr.dog):
        _, h, w = d.shape
        if h <= 2 * BORDER or w <= 2 * BORDER:
            continue
        hi, lo = _neighbourhood_extrema(d)
        ext = np.zeros(d.shape, dtype=bool)
        core = d[1:-1]
        ext[1:-1] = ((core >= hi) & (core > threshold)) | ((core <= lo) & (core < -threshold))
        ext[0] = ext[-1] = False
        ext[:, :BORDER] = ext[:, h - BORDER :] = False
        ext[:, :, :BORDER] = ext[:, :, w - BORDER :] = False
        s, r, c = np.nonzero(ext)
        if s.size == 0:
            continue
        keep, off, contrast = _refine(d, s, r, c)
        keep &= np.abs(contrast) * INTERVALS >= CONTRAST_THRESHOLD
        keep[keep] = _edge_ok(d, s[keep], r[keep], c[keep])
        for i in np.flatnonzero(keep):
            found.append((o, s[i] + off[i, 2], r[i] + off[i, 1], c[i] + off[i, 0], abs(contrast[i]), s[i], r[i], c[i]))
    return found


def _windows(arr, rows, cols, radius, fill=0.0):
    """Stack of (2 * radius + 1)^2 windows centred on integer positions."""
    padded = np.pad(arr, radius, mode="constant", constant_values=fill)
    off = np.arange(-radius, radius + 1)
    rr = rows[:, None, None] + radius + off[None, :, None]
    cc = cols[:, None, None] + radius + off[None, None, :]
    return padded[rr, cc], off


def _orientation_histograms(pyr, octave, layer_idx, rows, cols, layers):
    sigma = ORI_SIGMA_FACTOR * SIGMA0 * 2.0 ** (layers / INTERVALS)
    radius_k = np.round(3 * sigma).astype(int)
    radius = int(radius_k.max())
    mag, ori = pyr.gradients(octave, layer_idx)
    mag = mag.copy()
    mag[0, :] = mag[-1, :] = 0
    mag[:, 0] = mag[:, -1] = 0
    mw, off = _windows(mag, rows, cols, radius)
    ow, _ = _windows(ori, rows, cols, radius)
    dist2 = off[None, :, None] ** 2 + off[None, None, :] ** 2
    in_box = (np.abs(off)[None, :, None] <= radius_k[:, None, None]) & (
        np.abs(off)[None, None, :] <= radius_k[:, None, None]
    )
    weight = np.exp(-dist2 / (2 * sigma[:, None, None] ** 2)) * mw * in_box
    bins = np.floor(ow % (2 * np.pi) / (2 * np.pi) * ORI_BINS).astype(int) % ORI_BINS
    k = np.arange(len(rows))[:, None, None] * ORI_BINS
    hist = np.bincount((bins + k).ravel(), weight.ravel(), minlength=len(rows) * ORI_BINS)
    hist = hist.reshape(len(rows), ORI_BINS)
    roll = lambda h, n: np.roll(h, n, axis=1)  # noqa: E731
    return (6 * hist + 4 * (roll(hist, 1) + roll(hist, -1)) + roll(hist, 2) + roll(hist, -2)) / 16.0


def _peak_angles(hist):
    peak = hist.max()
    if peak <= 0:
        return []
    left, right = np.roll(hist, 1), np.roll(hist, -1)
    angles = []
    for b in np.flatnonzero((hist > left) & (hist > right) & (hist >= ORI_PEAK_RATIO * peak)):
        denom = left[b] - 2 * hist[b] + right[b]
        shift = 0.5 * (left[b] - right[b]) / denom if denom != 0 else 0.0
        angles.append(((b + 0.5 + shift) / ORI_BINS * 2 * np.pi) % (2 * np.pi))
    return angles


def _detect(pyr, max_count):
    cands = _candidates(pyr)
    cands.sort(key=lambda t: (-t[4], t[0], t[2], t[3]))
    cands = cands[:max_count]
    groups = {}
    for i, cand in enumerate(cands):
        groups.setdefault((cand[0], int(cand[5])), []).append(i)
    angles = [None] * len(cands)
    for (o, s_i), members in groups.items():
        rows = np.array([cands[i][6] for i in members])
        cols = np.array([cands[i][7] for i in members])
        layers = np.array([cands[i][1] for i in members])
        hists = _orientation_histograms(pyr, o, s_i, rows, cols, layers)
        for i, hist in zip(members, hists):
            angles[i] = _peak_angles(hist)
    kps = []
    for (o, layer, y, x, resp, *_), cand_angles in zip(cands, angles):
        factor = 2.0**o
        scale = SIGMA0 * 2.0 ** (layer / INTERVALS) * factor
        for angle in cand_angles:
            kps.append(
                Keypoint(
                    x=float(x * factor + 0.5),
                    y=float(y * factor + 0.5),
                    scale=float(scale),
                    orientation=float(angle),
                    response=float(resp),
                    octave=o,
                    layer=float(layer),
                )
            )
    kps.sort(key=lambda k: -k.response)
    return kps[:max_count]


def _pyramid_for(img):
    gray = check_gray_image(img)
    if gray.shape[0] < MIN_SIZE or gray.shape[1] < MIN_SIZE:
        raise ImageTooSmall(f"keypoint detection needs at least {MIN_SIZE}x{MIN_SIZE} pixels")
    return _Pyramid(gray)


def detect_keypoints(img, max_count=1000):
    """Keypoints of a grayscale image, strongest response first, at most ``max_count``."""
    return _detect(_pyramid_for(img), max_count)


def _describe_group(pyr, octave, layer_idx, kps):
    mag, ori = pyr.gradients(octave, layer_idx)
    h, w = mag.shape
    n = len(kps)
    factor = 2.0**octave
    cx = np.array([(kp.x - 0.5) / factor for kp in kps])
    cy = np.array([(kp.y - 0.5) / factor for kp in kps])
    theta = np.array([kp.orientation for kp in kps])
    cell = DESC_SCALE * np.array([kp.scale for kp in kps]) / factor
    radius_k = np.round(cell * np.sqrt(2) * (DESC_WIDTH + 1) * 0.5).astype(int)
    radius = int(min(radius_k.max(), max(h, w)))
    rows = np.clip(np.round(cy).astype(int), 0, h - 1)
    cols = np.clip(np.round(cx).astype(int), 0, w - 1)
    off = np.arange(-radius, radius + 1)
    dx = (cols[:, None] + off[None, :] - cx[:, None])[:, None, :]
    dy = (rows[:, None] + off[None, :] - cy[:, None])[:, :, None]
    cos_t, sin_t = np.cos(theta)[:, None, None], np.sin(theta)[:, None, None]
    cell = cell[:, None, None]
    xr = (cos_t * dx + sin_t * dy) / cell
    yr = (-sin_t * dx + cos_t * dy) / cell
    xb = xr + DESC_WIDTH / 2 - 0.5
    yb = yr + DESC_WIDTH / 2 - 0.5
    inside = (xb > -1) & (xb < DESC_WIDTH) & (yb > -1) & (yb < DESC_WIDTH)
    kid, ir, ic = np.nonzero(inside)
    pr = rows[kid] + off[ir]
    pc = cols[kid] + off[ic]
    in_img = (pr >= 0) & (pr < h) & (pc >= 0) & (pc < w)
    kid, pr, pc = kid[in_img], pr[in_img], pc[in_img]
    xr, yr, xb, yb = (a[inside][in_img] for a in (xr, yr, xb, yb))
    m = mag[pr, pc]
    nz = m > 0
    kid, xr, yr, xb, yb, m = kid[nz], xr[nz], yr[nz], xb[nz], yb[nz], m[nz]
    ob = ((ori[pr[nz], pc[nz]] - theta[kid]) % (2 * np.pi)) / (2 * np.pi) * DESC_BINS
    wgt = m * np.exp(-(xr**2 + yr**2) / (2 * (0.5 * DESC_WIDTH) ** 2))

    x0, y0, o0 = np.floor(xb).astype(int), np.floor(yb).astype(int), np.floor(ob).astype(int)
    fx, fy, fo = xb - x0, yb - y0, ob - o0
    side = DESC_WIDTH + 2
    per_kp = side * side * DESC_BINS
    index, weight = [], []
    for iy, wy in ((0, 1 - fy), (1, fy)):
        for ix, wx in ((0, 1 - fx), (1, fx)):
            for io, wo in ((0, 1 - fo), (1, fo)):
                flat = ((y0 + iy + 1) * side + (x0 + ix + 1)) * DESC_BINS + (o0 + io) % DESC_BINS
                index.append(kid * per_kp + flat)
                weight.append(wgt * wy * wx * wo)
    hist = np.bincount(np.concatenate(index), np.concatenate(weight), minlength=n * per_kp).astype(float)
    vec = hist.reshape(n, side, side, DESC_BINS)[:, 1:-1, 1:-1].reshape(n, -1)
    norm = np.linalg.norm(vec, axis=1, keepdims=True)
    vec = np.minimum(np.divide(vec, norm, out=np.zeros_like(vec), where=norm > 0), DESC_CLAMP)
    norm = np.linalg.norm(vec, axis=1, keepdims=True)
    return np.divide(vec, norm, out=np.zeros_like(vec), where=norm > 0)


def _describe(pyr, kps):
    out = np.zeros((len(kps), DESC_WIDTH * DESC_WIDTH * DESC_BINS))
    groups = {}
    for i, kp in enumerate(kps):
        octave = min(max(kp.octave, 0), pyr.n_octaves - 1)
        layer_idx = int(np.clip(np.round(kp.layer), 0, INTERVALS + 2))
        groups.setdefault((octave, layer_idx), []).append(i)
    for (octave, layer_idx), members in groups.items():
        out[members] = _describe_group(pyr, octave, layer_idx, [kps[i] for i in members])
    return out


def compute_descriptors(img, kps):
    """128-d descriptors, one row per keypoint, L2-normalised after clamping at 0.2.

    A keypoint whose window has no gradient gets the zero vector.
    """
    return _describe(_pyramid_for(img), list(kps))


def detect_and_compute(img, max_count=1000):
    """Detection and description sharing one scale-space pyramid."""
    pyr = _pyramid_for(img)
    kps = _detect(pyr, max_count)
    return kps, _describe(pyr, kps)
