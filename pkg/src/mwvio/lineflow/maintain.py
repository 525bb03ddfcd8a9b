"""Keeping a tracked line set healthy: merging, endpoint extension, replenishment."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .detect import DetectorParams, detect_lines, gradients
from .image import GrayImage, bilinear
from .segment import LineSegment2D

MERGE_ANGLE_DEG = 3.0
MERGE_OFFSET_PX = 2.0
MERGE_GAP_PX = 10.0
EXTEND_RATIO = 0.7
EXTEND_MAX_PX = 20
EDGE_REACH_PX = 2.5  # search across the line for its edge response
EXCLUSION_PX = 8.0
MIN_EDGE_RESPONSE = DetectorParams().gradient_threshold


def _first_mergeable(segs):
    """First (i, j), i longer, passing all merge tests, scanning longest first; or None."""
    n = len(segs)
    if n < 2:
        return None
    S = np.array([s.start for s in segs])
    E = np.array([s.end for s in segs])
    L = np.linalg.norm(E - S, axis=1)
    D = (E - S) / np.maximum(L, 1e-12)[:, None]
    N = np.column_stack([-D[:, 1], D[:, 0]])
    ok = np.abs(D @ D.T) >= np.cos(np.deg2rad(MERGE_ANGLE_DEG))
    # rows: longer segment i, columns: shorter segment j
    ok &= np.triu(np.ones((n, n), dtype=bool), 1)
    ok &= (L[:, None] > 1e-9) & (L[None, :] > 1e-9)
    dS = S[None, :, :] - S[:, None, :]
    dE = E[None, :, :] - S[:, None, :]
    offs = np.maximum(np.abs(np.einsum("ijk,ik->ij", dS, N)), np.abs(np.einsum("ijk,ik->ij", dE, N)))
    ok &= offs < MERGE_OFFSET_PX
    t1 = np.einsum("ijk,ik->ij", dS, D)
    t2 = np.einsum("ijk,ik->ij", dE, D)
    lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
    gap = np.maximum(lo - L[:, None], -hi)
    ok &= gap < MERGE_GAP_PX
    hits = np.argwhere(ok)
    if len(hits) == 0:
        return None
    i, j = hits[0]
    return int(i), int(j), min(0.0, lo[i, j]), max(L[i], hi[i, j])


def merge_collinear(lines) -> list:
    """Merge near-collinear neighbours until no pair passes all three tests.

    Criteria: angle < 3 deg, the shorter segment's endpoints within 2 px of the
    longer one's line, and an end-to-end gap < 10 px. The merged segment spans
    the extreme projections on the longer parent's line and keeps its id.
    """
    segs = sorted((s.copy() for s in lines), key=lambda s: -s.length)
    while True:
        hit = _first_mergeable(segs)
        if hit is None:
            return segs
        i, j, lo, hi = hit
        a = segs[i]
        d = a.direction
        merged = a.copy(start=a.start + lo * d, end=a.start + hi * d)
        del segs[j]
        del segs[i]
        # keep the list sorted by length so the longer parent stays first
        k = 0
        while k < len(segs) and segs[k].length >= merged.length:
            k += 1
        segs.insert(k, merged)


def _edge_profile(gx, gy, pts, normal):
    """Strongest gradient component across the line within a few px of each point."""
    offs = np.linspace(-EDGE_REACH_PX, EDGE_REACH_PX, 11)
    q = pts[:, None, :] + offs[None, :, None] * normal
    g = np.stack([gx, gy], axis=-1)
    v, inside = bilinear(g, q[..., 0], q[..., 1])
    perp = np.abs(v @ normal)
    perp[~inside] = 0.0
    return perp.max(axis=1)


def extend_endpoints(line: LineSegment2D, img: GrayImage, grads=None) -> LineSegment2D:
    """March each end outward 1 px at a time while the edge response stays at
    >= 0.7 of the line's mean; at most 20 px per end.

    A line whose mean response is below the detector's gradient threshold has
    no edge support and is returned unchanged.
    """
    gx, gy = gradients(img.data) if grads is None else grads
    d, n = line.direction, line.normal
    mean = _edge_profile(gx, gy, line.samples, n).mean()
    if mean < MIN_EDGE_RESPONSE:
        return line.copy()
    steps = np.arange(1, EXTEND_MAX_PX + 1, dtype=float)
    ends = []
    for p, sgn in ((line.start, -1.0), (line.end, 1.0)):
        pts = p + sgn * steps[:, None] * d
        ok = (pts[:, 0] >= 0) & (pts[:, 0] <= img.width - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= img.height - 1)
        resp = _edge_profile(gx, gy, pts, n)
        good = ok & (resp >= EXTEND_RATIO * mean)
        k = len(steps) if good.all() else int(np.argmin(good))
        ends.append(p + sgn * k * d)
    return line.copy(start=ends[0], end=ends[1])


def _distance_to_segments(P, segs):
    """Minimum distance from each point in P (N, 2) to any of ``segs``."""
    if not segs:
        return np.full(len(P), np.inf)
    A = np.array([s.start for s in segs])
    B = np.array([s.end for s in segs])
    D = B - A
    L2 = np.maximum(np.einsum("ij,ij->i", D, D), 1e-12)
    t = np.clip(np.einsum("nij,ij->ni", P[:, None, :] - A[None], D) / L2, 0.0, 1.0)
    Q = A[None] + t[..., None] * D[None]
    return np.linalg.norm(P[:, None, :] - Q, axis=2).min(axis=1)


def exclusion_mask(lines, width, height, band=EXCLUSION_PX) -> np.ndarray:
    Y, X = np.mgrid[0:height, 0:width]
    P = np.column_stack([X.ravel(), Y.ravel()]).astype(float)
    if not lines:
        return np.zeros((height, width), dtype=bool)
    # only evaluate pixels inside the lines' padded bounding boxes
    out = np.zeros(len(P), dtype=bool)
    for s in lines:
        lo = np.minimum(s.start, s.end) - band - 1
        hi = np.maximum(s.start, s.end) + band + 1
        sel = np.flatnonzero((P[:, 0] >= lo[0]) & (P[:, 0] <= hi[0]) & (P[:, 1] >= lo[1]) & (P[:, 1] <= hi[1]))
        out[sel] |= _distance_to_segments(P[sel], [s]) < band
    return out.reshape(height, width)


def replenish(tracked, img: GrayImage, p: DetectorParams | None = None, next_id=None) -> list:
    """Top up ``tracked`` to ``p.target_count`` with detections outside an 8 px band
    around the tracked lines. New ids continue from ``next_id`` (default: max id + 1)."""
    p = DetectorParams() if p is None else p
    tracked = list(tracked)
    need = p.target_count - len(tracked)
    if need <= 0:
        return tracked
    mask = exclusion_mask(tracked, img.width, img.height)
    found = detect_lines(img, replace(p, target_count=need), mask=mask)
    nid = (max((s.id for s in tracked), default=-1) + 1) if next_id is None else next_id
    out = list(tracked)
    for s in found:
        if len(out) >= p.target_count:
            break
        if _distance_to_segments(s.samples, tracked).min() < EXCLUSION_PX:
            continue
        out.append(s.copy(id=nid, axis=None))
        nid += 1
    return out
