"""Four-parameter pyramidal line optical flow.

A line moves by a similarity anchored at its start point:

    x' = x_s + (g1, g2) + (1 + g4) R(g3) (x - x_s)

so (g1, g2) shift the start, g3 rotates the line about it and g4 changes its
length. At g = 0 the warp Jacobian of a sample (u, v) is

    [[1, 0, -(v - v_s), u - u_s],
     [0, 1,  u - u_s,  v - v_s]]

which, chained with the image gradient, gives one row per sample of an
over-determined system solved by Gauss-Newton, coarse to fine. Away from g = 0
the exact warp Jacobian is used.

Samples are the line's points plus short perpendicular offsets and a few
points past each end: the centre of a thin bar has no gradient, and its caps
are the only evidence of motion along the line. Offsets and cap extensions
move rigidly with the line while its interior stretches by g4. Template samples stay fixed in
the previous image, so there is no re-spacing between iterations.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .image import ImagePyramid
from .segment import LineSegment2D

CONVERGED_STEP = 1e-3
MAX_RESIDUAL = 20.0  # mean absolute intensity
MOTION_FRACTION = 0.5 / 8  # |g1|, |g2| bound as a fraction of the level width
PERP_OFFSETS = (-2.0, -1.0, 1.0, 2.0)  # level px; a thin bar's centre row carries no gradient
END_EXTENSION = 3.0  # level px sampled past each end
DEGENERATE_RATIO = 1e-4  # eigenvalue ratio of the length-scaled normal matrix
DAMPING = 1e-6
MAX_ALONG = 12  # interior sample intervals per line


class TrackStatus(str, Enum):
    TRACKED = "Tracked"
    DIVERGED = "Diverged"
    OUT_OF_BOUNDS = "OutOfBounds"


@dataclass(frozen=True)
class LineMotion:
    g1: float = 0.0  # px
    g2: float = 0.0
    g3: float = 0.0  # rad
    g4: float = 0.0  # relative length change

    def as_array(self) -> np.ndarray:
        return np.array([self.g1, self.g2, self.g3, self.g4])


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def apply_motion(line: LineSegment2D, g) -> LineSegment2D:
    """Move a level-0 segment by motion ``g`` (LineMotion or 4-vector)."""
    g = g.as_array() if isinstance(g, LineMotion) else np.asarray(g, float)
    R = _rot(g[2])
    start = line.start + g[:2]
    end = start + (1.0 + g[3]) * R @ (line.end - line.start)
    return line.copy(start=start, end=end)


def _layout(lines, scale):
    """Sample layout of all lines at one pyramid level, in level pixels.

    Every line gets the same number of samples: ``MAX_ALONG + 1`` evenly spaced
    positions along it plus 1 px steps over each cap, each repeated at the
    perpendicular offsets. Returns (ac, ax, o, start, length, direction) where a
    sample sits ``ac + ax`` along the line (``ac`` clipped to the line) and
    ``o`` across it.
    """
    P = np.array([l.start for l in lines]) * scale
    Q = np.array([l.end for l in lines]) * scale
    L = np.maximum(np.linalg.norm(Q - P, axis=1), 1e-9)
    D = (Q - P) / L[:, None]
    caps = np.arange(-END_EXTENSION, 1e-9, 1.0)
    frac = np.linspace(0.0, 1.0, MAX_ALONG + 1)
    along = np.concatenate([np.broadcast_to(caps, (len(L), len(caps))), frac * L[:, None],
                            L[:, None] - caps[::-1]], axis=1)
    offs = np.asarray(PERP_OFFSETS)
    A = np.repeat(along, len(offs), axis=1)
    O = np.broadcast_to(np.tile(offs, along.shape[1]), A.shape)
    AC = np.clip(A, 0.0, L[:, None])
    return AC, A - AC, O, P, L, D


def _sample(stack, x, y):
    """Bilinear lookup of a (H, W, 3) stack at float coordinates; returns values and inside mask.

    Points within one pixel of the border count as outside so central
    differences stay valid.
    """
    h, w = stack.shape[:2]
    inside = (x >= 1) & (x <= w - 2) & (y >= 1) & (y <= h - 2)
    xc = np.clip(x, 0, w - 1.000001)
    yc = np.clip(y, 0, h - 1.000001)
    x0, y0 = xc.astype(np.intp), yc.astype(np.intp)
    fx, fy = (xc - x0)[..., None], (yc - y0)[..., None]
    k = (y0 * w + x0).ravel()
    # one gather for all four neighbours is much faster than four fancy indexes
    c = np.take(stack.reshape(-1, 3), np.concatenate([k, k + 1, k + w, k + w + 1]), axis=0)
    c = c.reshape((4,) + x.shape + (3,))
    top = c[0] + fx * (c[1] - c[0])
    bot = c[2] + fx * (c[3] - c[2])
    return top + fy * (bot - top), inside


def _warp(h, start, ac, ax, o, d):
    """Warped sample positions and the Jacobian columns of the two angular parameters.

    Only the part of a sample inside the line scales with g4; cap extensions and
    perpendicular offsets move rigidly, so a bar keeps its width and caps under
    a length change. On the line itself this is exactly the similarity warp.
    Returns x, y, (j3x, j3y), (j4x, j4y), each (M, S).
    """
    c, s = np.cos(h[:, 2]), np.sin(h[:, 2])
    rdx = (c * d[:, 0] - s * d[:, 1])[:, None]
    rdy = (s * d[:, 0] + c * d[:, 1])[:, None]
    along = (1.0 + h[:, 3])[:, None] * ac + ax
    wx = along * rdx - o * rdy
    wy = along * rdy + o * rdx
    x = start[:, 0:1] + h[:, 0:1] + wx
    y = start[:, 1:2] + h[:, 1:2] + wy
    return x, y, (-wy, wx), (ac * rdx, ac * rdy)


def _normal_system(V, T, m, j3, j4, scale34=None):
    """Per-line Gauss-Newton normal matrix and right-hand side."""
    gx, gy = V[..., 1], V[..., 2]
    J = np.empty(gx.shape + (4,))
    J[..., 0] = gx
    J[..., 1] = gy
    J[..., 2] = gx * j3[0] + gy * j3[1]
    J[..., 3] = gx * j4[0] + gy * j4[1]
    if scale34 is not None:
        J[..., 2:] /= scale34[:, None, None]
    J *= m[..., None]
    r = (V[..., 0] - T) * m
    Jt = J.transpose(0, 2, 1)
    return Jt @ J, -(Jt @ r[..., None])[..., 0]


def track_lines(prev: ImagePyramid, cur: ImagePyramid, lines, max_iters=10, init=None):
    """Track many lines at once. Returns a list of (LineSegment2D, LineMotion, TrackStatus).

    ``init`` optionally gives (M, 4) starting motions in level-0 units.
    """
    lines = list(lines)
    M = len(lines)
    if M == 0:
        return []
    if len(prev) != len(cur):
        raise ValueError("pyramids must have the same depth")
    g = np.zeros((M, 4)) if init is None else np.array(init, dtype=float).reshape(M, 4)
    failed = np.zeros(M, dtype=bool)
    degenerate = np.zeros(M, dtype=bool)
    out_of_bounds = np.zeros(M, dtype=bool)
    resid = np.zeros(M)
    for lev in range(len(prev) - 1, -1, -1):
        scale = 0.5 ** lev
        P, C = prev.flow_levels[lev].stack, cur.flow_levels[lev].stack
        AC, AX, O, xs, Ls, D = _layout(lines, scale)
        x, y, _, _ = _warp(np.zeros((M, 4)), xs, AC, AX, O, D)
        T, mask = _sample(P, x, y)
        T = T[..., 0]
        # per-level parameters: shift in level pixels, rotation, length change
        h = g.copy()
        h[:, :2] *= scale
        # Gauss-Newton with per-line step control: a step that raises the squared
        # residual is undone and retried with heavier damping. Costs are compared
        # over samples valid at both positions, so samples crossing the border
        # neither reward nor punish a step.
        active = ~failed
        h_acc = h.copy()
        H_acc = np.zeros((M, 4, 4))
        b_acc = np.zeros((M, 4))
        r_acc = np.zeros(mask.shape)
        v_acc = np.zeros(mask.shape, dtype=bool)
        fresh = np.ones(M, dtype=bool)
        mu = np.full(M, DAMPING)
        for _ in range(max_iters):
            if not active.any():
                break
            ids = np.flatnonzero(active)
            x, y, j3, j4 = _warp(h[ids], xs[ids], AC[ids], AX[ids], O[ids], D[ids])
            V, win = _sample(C, x, y)
            m = mask[ids] & win
            Hn, bn = _normal_system(V, T[ids], m, j3, j4)
            r = (V[..., 0] - T[ids]) * m
            common = m & v_acc[ids]
            ok = fresh[ids] | ((r ** 2 * common).sum(1) <= (r_acc[ids] ** 2 * common).sum(1))
            acc, rej = ids[ok], ids[~ok]
            h_acc[acc], H_acc[acc], b_acc[acc] = h[acc], Hn[ok], bn[ok]
            r_acc[acc], v_acc[acc], fresh[acc] = r[ok], m[ok], False
            mu[acc] = np.maximum(mu[acc] / 10, DAMPING)
            mu[rej] *= 10
            Hd = H_acc[ids] + (mu[ids] * (np.trace(H_acc[ids], axis1=1, axis2=2) + 1e-12))[:, None, None] * np.eye(4)
            step = np.linalg.solve(Hd, b_acc[ids][..., None])[..., 0]
            h[ids] = h_acc[ids] + step
            active[ids] = (np.linalg.norm(step, axis=1) >= CONVERGED_STEP) & (mu[ids] < 1e6)
        # evaluate the level's end state
        x, y, j3, j4 = _warp(h, xs, AC, AX, O, D)
        V, win = _sample(C, x, y)
        m = mask & win
        resid = np.abs((V[..., 0] - T) * m).sum(1) / np.maximum(mask.sum(1), 1)
        lost = (mask & ~win).any(1)
        bound = MOTION_FRACTION * P.shape[1]
        bad = (np.abs(h[:, :2]) > bound).any(1) | (np.abs(h[:, 2]) >= np.pi / 2) | ~np.isfinite(h).all(1)
        if lev == 0:
            out_of_bounds |= lost & ~failed
            degenerate |= _degenerate(V, m, j3, j4, Ls)
        failed |= bad
        h[:, :2] /= scale
        g = np.where(failed[:, None], g, h)
    results = []
    for i, l in enumerate(lines):
        motion = LineMotion(*map(float, g[i]))
        # samples leaving the image also starve the system, so report that first
        if failed[i]:
            status = TrackStatus.DIVERGED
        elif out_of_bounds[i]:
            status = TrackStatus.OUT_OF_BOUNDS
        elif degenerate[i] or resid[i] > MAX_RESIDUAL:
            status = TrackStatus.DIVERGED
        else:
            status = TrackStatus.TRACKED
        results.append((apply_motion(l, g[i]), motion, status))
    return results


def _degenerate(V, m, j3, j4, Ls):
    """True where the normal matrix, with angular columns scaled to pixels, is near rank deficient."""
    H, _ = _normal_system(V, V[..., 0], m, j3, j4, scale34=Ls)
    ev = np.linalg.eigvalsh(H)
    return (m.sum(1) < 5) | (ev[:, 0] <= DEGENERATE_RATIO * np.maximum(ev[:, -1], 1e-12))


def track_line(prev: ImagePyramid, cur: ImagePyramid, line: LineSegment2D, max_iters=10):
    """Track one line; returns (moved line, LineMotion, TrackStatus)."""
    return track_lines(prev, cur, [line], max_iters)[0]
