"""Gradient-anchor line segment detector in the spirit of edge drawing.

Anchors are gradient maxima above ``anchor_threshold``; from each anchor a
chain is walked along the edge tangent through pixels above
``gradient_threshold`` whose orientation agrees with the anchor. Chains are
split into straight pieces (1 px tolerance) and fitted by least squares.

A thin dark bar produces two parallel edges. Each fitted piece is snapped
across itself onto the intensity valley, so both edges land on the bar's centre
line and merge into one segment.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from ..errors import ConfigInvalid
from .image import GrayImage, bilinear
from .segment import LineSegment2D

SPLIT_TOL = 1.0
ORIENT_TOL = np.deg2rad(22.5)
GRID_CELLS = 8
VALLEY_REACH = 4.0  # px searched across a segment for a dark bar centre
VALLEY_DEPTH = 10.0  # intensity
VALLEY_EXTEND = 20.0  # px an end may move along the fitted centre line
OFFSET_STEP = 0.5
ABSORB_OFFSET = 2.0
ABSORB_GAP = 10.0
GAP_JUMP = 8  # px bridged along the anchor direction, e.g. where another bar crosses

# 8-neighbourhood as (drow, dcol), counter-clockwise from +x
_NEIGH = np.array([(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)])


@dataclass(frozen=True)
class DetectorParams:
    gradient_threshold: float = 8.0  # intensity / px
    anchor_threshold: float = 24.0
    min_length: float = 20.0
    target_count: int = 80

    def __post_init__(self):
        if min(self.gradient_threshold, self.anchor_threshold, self.min_length, self.target_count) <= 0:
            raise ConfigInvalid("detector parameters must be positive")


def gradients(data: np.ndarray, sigma=1.0, return_smooth=False):
    """Sobel derivatives (intensity per pixel) of the Gaussian-smoothed image."""
    s = ndimage.gaussian_filter(np.asarray(data, dtype=float), sigma, mode="nearest")
    gx = ndimage.sobel(s, axis=1, mode="nearest") / 8.0
    gy = ndimage.sobel(s, axis=0, mode="nearest") / 8.0
    return (gx, gy, s) if return_smooth else (gx, gy)


def _anchors(mag, gx, gy, thr):
    """Pixels above ``thr`` that are maxima across the edge (horizontal or vertical NMS)."""
    m = np.pad(mag, 1)
    horiz = np.abs(gx) >= np.abs(gy)  # vertical edge: compare left/right
    c = m[1:-1, 1:-1]
    lr = (c > m[1:-1, :-2]) & (c >= m[1:-1, 2:])
    ud = (c > m[:-2, 1:-1]) & (c >= m[2:, 1:-1])
    ok = (mag >= thr) & np.where(horiz, lr, ud)
    ok[0, :] = ok[-1, :] = ok[:, 0] = ok[:, -1] = False
    r, cc = np.nonzero(ok)
    order = np.argsort(-mag[r, cc], kind="stable")
    return r[order], cc[order]


def _walk(r, c, heading, mag, theta, visited, thr, theta0):
    """Follow the edge from (r, c) along ``heading`` (radians, image x right / y up)."""
    h, w = mag.shape
    out = []
    while True:
        k = int(np.round(heading / (np.pi / 4))) % 8
        best, best_m = None, thr
        for dk in (0, -1, 1):
            kk = (k + dk) % 8
            rr, c2 = r + _NEIGH[kk, 0], c + _NEIGH[kk, 1]
            if not (0 < rr < h - 1 and 0 < c2 < w - 1) or visited[rr, c2]:
                continue
            d = abs(np.angle(np.exp(2j * (theta[rr, c2] - theta0)))) / 2
            if d > ORIENT_TOL:
                continue
            if mag[rr, c2] >= best_m:
                best, best_m = (rr, c2), mag[rr, c2]
        if best is None:
            best = _jump(r, c, heading, mag, theta, visited, thr, theta0)
            if best is None:
                return out
        r, c = best
        visited[r, c] = True
        out.append((r, c))
        # keep heading along the local tangent, oriented like the step just taken
        t = theta[r, c] + np.pi / 2
        step = np.arctan2(-_NEIGH[k, 0], _NEIGH[k, 1])
        heading = t if np.cos(t - step) >= 0 else t + np.pi


def _jump(r, c, heading, mag, theta, visited, thr, theta0):
    """Look past a break along the anchor's tangent for the edge to resume."""
    h, w = mag.shape
    t = theta0 + np.pi / 2
    if np.cos(t - heading) < 0:
        t += np.pi
    tx, ty = np.cos(t), -np.sin(t)  # image coordinates, y down
    for j in range(2, GAP_JUMP + 1):
        for o in (0, -1, 1):
            x = int(np.rint(c + j * tx - o * ty))
            y = int(np.rint(r + j * ty + o * tx))
            if not (0 < y < h - 1 and 0 < x < w - 1) or visited[y, x] or mag[y, x] < thr:
                continue
            if abs(np.angle(np.exp(2j * (theta[y, x] - theta0)))) / 2 <= ORIENT_TOL:
                return y, x
    return None


def _fit(pts):
    mu = pts.mean(0)
    _, _, Vt = np.linalg.svd(pts - mu, full_matrices=False)
    d = Vt[0]
    n = np.array([-d[1], d[0]])
    return mu, d, n


def _split(pts, min_pts):
    """Recursive straight-piece split of an ordered chain (x, y points)."""
    if len(pts) < min_pts:
        return []
    mu, d, n = _fit(pts)
    dev = np.abs((pts - mu) @ n)
    k = int(np.argmax(dev))
    if dev[k] <= SPLIT_TOL:
        return [pts]
    k = min(max(k, 1), len(pts) - 2)
    return _split(pts[:k + 1], min_pts) + _split(pts[k:], min_pts)


def _segment_from_points(pts):
    mu, d, _ = _fit(pts)
    s = (pts - mu) @ d
    a, b = mu + s.min() * d, mu + s.max() * d
    return a, b


def _chains(mag, theta, gx, gy, p: DetectorParams, thr):
    visited = np.zeros(mag.shape, dtype=bool)
    rows, cols = _anchors(mag, gx, gy, p.anchor_threshold)
    out = []
    for r, c in zip(rows, cols):
        if visited[r, c]:
            continue
        visited[r, c] = True
        th0 = theta[r, c]
        t = th0 + np.pi / 2
        fwd = _walk(r, c, t, mag, theta, visited, thr, th0)
        bwd = _walk(r, c, t + np.pi, mag, theta, visited, thr, th0)
        chain = bwd[::-1] + [(r, c)] + fwd
        if len(chain) >= p.min_length * 0.7:
            out.append(np.array([(cc, rr) for rr, cc in chain], dtype=float))
    return out


def _snap_to_valley(seg: LineSegment2D, smooth: np.ndarray):
    """Refit a segment onto the intensity valley running along it, if there is one.

    Each sample looks across the segment for the darkest offset (parabolic
    sub-pixel peak); samples on a clear valley are refitted, outliers beyond
    1 px dropped once. Both edges of a thin dark bar land on the same centre
    line and are later merged as collinear duplicates.
    """
    offs = np.arange(-VALLEY_REACH, VALLEY_REACH + 1e-9, OFFSET_STEP)
    pts = seg.samples
    n = seg.normal
    q = pts[:, None, :] + offs[None, :, None] * n
    v, inside = bilinear(smooth, q[..., 0], q[..., 1])
    k = np.argmin(v, axis=1)
    rows = np.arange(len(pts))
    depth = np.minimum(v[:, 0], v[:, -1]) - v[rows, k]
    ok = inside.all(axis=1) & (k > 0) & (k < len(offs) - 1) & (depth > VALLEY_DEPTH)
    if ok.sum() < max(5, 0.3 * len(pts)):
        return seg
    kk = np.clip(k, 1, len(offs) - 2)
    a, b, c = v[rows, kk - 1], v[rows, kk], v[rows, kk + 1]
    den = a - 2 * b + c
    frac = np.where(den > 1e-9, 0.5 * (a - c) / np.maximum(den, 1e-9), 0.0)
    centre = pts + (offs[kk] + 0.5 * frac)[:, None] * n
    P = centre[ok]
    for _ in range(2):
        mu, d, nn = _fit(P)
        keep = np.abs((P - mu) @ nn) <= 1.0
        if keep.sum() < 5 or keep.all():
            break
        P = P[keep]
    if d @ seg.direction < 0:
        d = -d
    t0, t1 = (seg.start - mu) @ d, (seg.end - mu) @ d
    prof = v[ok].mean(axis=0)
    t0, t1 = _dark_extent(smooth, mu, d, t0, t1, prof, offs)
    return seg.copy(start=mu + t0 * d, end=mu + t1 * d)


def _dark_extent(smooth, mu, d, t0, t1, prof, offs):
    """Ends of the dark bar along the centre line through ``mu``, reached from [t0, t1].

    Centre samples are thresholded halfway between bar and background. A dark
    centre with a dark side as well belongs to another bar crossing or abutting
    this one: such stretches are bridged inside the run but trimmed at its ends.
    A free end is placed at the threshold crossing pulled back by the bar's half
    width, which is where a rounded cap ends; an end inside another bar is
    placed half a width past the last clean sample.
    """
    thr = 0.5 * (prof.min() + min(prof[0], prof[-1]))
    half = 0.5 * OFFSET_STEP * (prof < thr).sum()
    step = 0.5
    t = np.arange(t0 - VALLEY_EXTEND, t1 + VALLEY_EXTEND + 1e-9, step)
    nrm = np.array([-d[1], d[0]])
    side = 2 * offs[-1]
    pts = mu + t[:, None] * d
    c, inside = bilinear(smooth, pts[:, 0], pts[:, 1])
    s1, _ = bilinear(smooth, pts[:, 0] + side * nrm[0], pts[:, 1] + side * nrm[1])
    s2, _ = bilinear(smooth, pts[:, 0] - side * nrm[0], pts[:, 1] - side * nrm[1])
    dark = (c < thr) & inside
    clean = dark & (s1 > thr) & (s2 > thr)
    mid = int(np.argmin(np.abs(t - 0.5 * (t0 + t1))))
    if not clean.any():
        return t0, t1
    if not clean[mid]:
        idx = np.flatnonzero(clean)
        mid = idx[np.argmin(np.abs(idx - mid))]
        if not t0 - 1 <= t[mid] <= t1 + 1:
            return t0, t1
    # bridge short bright gaps from noise
    run = dark.copy()
    idx = np.flatnonzero(dark)
    for a, b in zip(idx[:-1], idx[1:]):
        if 1 < b - a <= int(2.0 / step):
            run[a:b] = True
    lo = hi = mid
    while lo > 0 and run[lo - 1]:
        lo -= 1
    while hi < len(t) - 1 and run[hi + 1]:
        hi += 1
    ends = []
    for k, sgn in ((lo, -1), (hi, 1)):
        if not clean[k]:
            # the run ends inside another bar: back off to the last clean sample
            seg = np.flatnonzero(clean[min(k, mid):max(k, mid) + 1]) + min(k, mid)
            kc = seg.min() if sgn < 0 else seg.max()
            ends.append(t[kc] + sgn * half)
            continue
        j = k + sgn
        if 0 <= j < len(t) and inside[j] and c[j] != c[k]:
            f = (thr - c[k]) / (c[j] - c[k])
            ends.append(t[k] + sgn * step * np.clip(f, 0.0, 1.0) - sgn * half)
        else:
            ends.append(t[k])
    return ends[0], ends[1]


def _absorb(segs, smooth):
    """Fold short pieces lying within 2 px of a longer segment's line into it.

    Pieces cut at crossings can be fitted a few degrees off and fail the merge
    angle test even though both of their ends sit on the longer line.
    """
    segs = sorted(segs, key=lambda s: -s.length)
    changed = True
    while changed:
        changed = False
        for i, a in enumerate(segs):
            d, n = a.direction, a.normal
            for j in range(i + 1, len(segs)):
                b = segs[j]
                ends = np.array([b.start, b.end]) - a.start
                if np.abs(ends @ n).max() >= ABSORB_OFFSET:
                    continue
                t = ends @ d
                if max(t.min() - a.length, -t.max()) >= ABSORB_GAP:
                    continue
                lo, hi = min(0.0, t.min()), max(a.length, t.max())
                segs[i] = _snap_to_valley(a.copy(start=a.start + lo * d, end=a.start + hi * d), smooth)
                del segs[j]
                changed = True
                break
            if changed:
                break
    return segs


def _distribute(segs, width, height):
    """Round-robin over an 8x8 grid of midpoints, longest first within each cell."""
    cells = {}
    for s in sorted(segs, key=lambda s: -s.length):
        cx = min(int(s.midpoint[0] / width * GRID_CELLS), GRID_CELLS - 1)
        cy = min(int(s.midpoint[1] / height * GRID_CELLS), GRID_CELLS - 1)
        cells.setdefault((max(cy, 0), max(cx, 0)), []).append(s)
    out = []
    queues = [cells[k] for k in sorted(cells)]
    depth = 0
    while any(depth < len(q) for q in queues):
        out.extend(q[depth] for q in queues if depth < len(q))
        depth += 1
    return out


def _detect_once(img: GrayImage, p: DetectorParams, thr, mask=None):
    gx, gy, smooth = gradients(img.data, return_smooth=True)
    mag = np.hypot(gx, gy)
    if mask is not None:
        mag = np.where(mask, 0.0, mag)
    theta = np.arctan2(-gy, gx)  # image y points down; angles use y up
    min_pts = max(int(p.min_length * 0.7), 3)
    raw = []
    for chain in _chains(mag, theta, gx, gy, p, thr):
        for piece in _split(chain, min_pts):
            a, b = _segment_from_points(piece)
            raw.append(LineSegment2D(a, b))
    segs = [_snap_to_valley(s, smooth) for s in raw if s.length >= 0.5 * p.min_length]
    from .maintain import merge_collinear
    segs = _absorb(merge_collinear(segs), smooth)
    # merged spans are unions of pieces; place their ends on the image again
    segs = merge_collinear([_snap_to_valley(s, smooth) for s in segs])
    return [s for s in segs if s.length >= p.min_length]


def detect_lines(img: GrayImage, p: DetectorParams | None = None, mask=None) -> list:
    """Detect line segments; ``mask`` (bool, H x W) suppresses gradients where True.

    If fewer than ``p.target_count`` segments come out, the gradient threshold is
    halved once and detection is repeated.
    """
    p = DetectorParams() if p is None else p
    segs = _detect_once(img, p, p.gradient_threshold, mask)
    if len(segs) < p.target_count:
        segs = _detect_once(img, replace(p, gradient_threshold=0.5 * p.gradient_threshold),
                            0.5 * p.gradient_threshold, mask)
    segs = _distribute(segs, img.width, img.height)
    for k, s in enumerate(segs):
        s.id = k
    return segs
