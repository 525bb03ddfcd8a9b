"""Rasterized simulator frames: dark anti-aliased bars on a bright noisy background."""
from __future__ import annotations

import numpy as np

from ..camera import Intrinsics
from ..lineflow.image import GrayImage
from .sim import T_CB_DEFAULT, Frame, Scene, camera_from_world, project_segment

BACKGROUND = 220.0
INK = 20.0
BAR_WIDTH = 3.0
NOISE_SIGMA = 2.0


def _distance_to_segment(X, Y, a, b):
    d = b - a
    L2 = max(d @ d, 1e-12)
    t = np.clip(((X - a[0]) * d[0] + (Y - a[1]) * d[1]) / L2, 0.0, 1.0)
    return np.hypot(X - (a[0] + t * d[0]), Y - (a[1] + t * d[1]))


def render_segments(segments, width=640, height=480, rng=None, noise=NOISE_SIGMA, bar_width=BAR_WIDTH,
                    background=BACKGROUND, ink=INK) -> GrayImage:
    """Draw each (2, 2) pixel segment as a bar of ``bar_width`` px with a 1 px linear edge ramp.

    Coverage of overlapping bars is the maximum, not the sum, so crossings stay dark
    rather than saturating.
    """
    cover = np.zeros((height, width))
    half = 0.5 * bar_width
    for seg in segments:
        a, b = np.asarray(seg[0], float), np.asarray(seg[1], float)
        lo = np.floor(np.minimum(a, b) - half - 2).astype(int)
        hi = np.ceil(np.maximum(a, b) + half + 2).astype(int)
        x0, y0 = max(lo[0], 0), max(lo[1], 0)
        x1, y1 = min(hi[0], width - 1), min(hi[1], height - 1)
        if x1 < x0 or y1 < y0:
            continue
        Y, X = np.mgrid[y0:y1 + 1, x0:x1 + 1].astype(float)
        c = np.clip(half + 0.5 - _distance_to_segment(X, Y, a, b), 0.0, 1.0)
        np.maximum(cover[y0:y1 + 1, x0:x1 + 1], c, out=cover[y0:y1 + 1, x0:x1 + 1])
    img = background - (background - ink) * cover
    if noise > 0:
        rng = np.random.default_rng(0) if rng is None else rng
        img = img + rng.normal(scale=noise, size=img.shape)
    return GrayImage(np.clip(img, 0.0, 255.0))


def true_segments(frame: Frame, scene: Scene, intr: Intrinsics, T_cb=T_CB_DEFAULT):
    """Noise-free pixel segments of the scene lines visible in ``frame``: {line id: (2, 2)}."""
    T_cw = camera_from_world(frame.gt_pose, T_cb)
    out = {}
    for i, (p, q) in enumerate(scene.lines):
        s = project_segment(T_cw, p, q, intr)
        if s is not None:
            out[i] = s
    return out


def rasterize(frame: Frame, scene: Scene, intr: Intrinsics, T_cb=T_CB_DEFAULT, seed=0,
              noise=NOISE_SIGMA) -> GrayImage:
    """Image of ``frame`` rendered from ground truth; noise is seeded per (seed, frame)."""
    rng = np.random.default_rng([seed, 2, frame.idx])
    segs = list(true_segments(frame, scene, intr, T_cb).values())
    return render_segments(segs, intr.width, intr.height, rng, noise)
