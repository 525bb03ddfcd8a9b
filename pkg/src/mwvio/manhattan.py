"""Manhattan-frame detection, tracking-by-detection, verification and world alignment.

``ManhattanFrame.r_cm`` maps Manhattan-world directions into the camera frame;
its columns are the three vanishing directions. Line evidence enters through
the interpretation-plane normal of each segment (``line_sphere_coeffs``): a
segment is consistent with vanishing direction ``vp`` when ``c . vp = 0``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import Intrinsics
from .errors import DegenerateSegment, InsufficientConstraints, ParallelLines, WindowTooSmall
from .geom import hat, is_rotation, nearest_rotation, rotation_angle, so3_exp
from .lineflow.segment import LineSegment2D

log = logging.getLogger(__name__)

GRID_LAT, GRID_LON = 90, 360
STRUCTURAL_LAMBDA = 10.0
COMMON_LAMBDA = 1.0
INLIER_SIN = np.sin(np.deg2rad(2.0))
MIN_INLIER_LINES = 6


@dataclass
class ManhattanFrame:
    r_cm: np.ndarray
    support: tuple = (0, 0, 0)
    frame_idx: int = -1
    valid: bool = True


@dataclass
class PolarGrid:
    bins: np.ndarray = field(default_factory=lambda: np.zeros((GRID_LAT, GRID_LON)))

    def index(self, p):
        """Bin of a unit vector; antipodes fold to the upper hemisphere."""
        p = np.asarray(p, dtype=float)
        p = np.where(p[..., 2:3] < 0, -p, p)
        lat = np.arcsin(np.clip(p[..., 2], 0.0, 1.0))
        lon = np.mod(np.arctan2(p[..., 1], p[..., 0]), 2 * np.pi)
        i = np.minimum((lat / (np.pi / 2) * GRID_LAT).astype(int), GRID_LAT - 1)
        j = np.minimum((lon / (2 * np.pi) * GRID_LON).astype(int), GRID_LON - 1)
        return i, j

    def score(self, p, radius=1):
        """Grid mass in a (2r+1)^2 neighbourhood around the bin of each direction."""
        i, j = self.index(p)
        total = np.zeros(np.shape(i))
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                ii = np.clip(i + di, 0, GRID_LAT - 1)
                jj = np.mod(j + dj, GRID_LON)
                total = total + self.bins[ii, jj]
        return total


@dataclass
class MfTrackState:
    prev: ManhattanFrame | None = None
    consecutive_failures: int = 0
    r_mw_alignment: np.ndarray | None = None
    last_case: str = "none"


@dataclass
class VerificationWindow:
    """``entries[i] = (R^c_M from the Manhattan tracker, R^c_W from the odometry back-end)``."""

    half_width: int
    entries: list


# -- line coefficients --

def line_sphere_coeffs(seg: LineSegment2D, intr: Intrinsics) -> np.ndarray:
    """Unit normal of the interpretation plane through the camera centre and ``seg``."""
    ps = np.append(intr.normalize(seg.start), 1.0)
    pe = np.append(intr.normalize(seg.end), 1.0)
    c = np.cross(ps, pe)
    nrm = np.linalg.norm(c)
    if nrm < 1e-12:
        raise DegenerateSegment("segment endpoints coincide")
    return c / nrm


def _coeff_matrix(lines, intr):
    C = np.empty((len(lines), 3))
    keep = np.ones(len(lines), dtype=bool)
    for k, seg in enumerate(lines):
        try:
            C[k] = line_sphere_coeffs(seg, intr)
        except DegenerateSegment:
            keep[k] = False
            C[k] = 0.0
    return C, keep


# -- 2-line hypothesis detection --

def _orthogonal_basis(v):
    a = np.array([1.0, 0, 0]) if abs(v[0]) < 0.9 else np.array([0, 1.0, 0])
    u = np.cross(v, a)
    u /= np.linalg.norm(u)
    return u, np.cross(v, u)


def _hypotheses_from_vp1(vp1, step_deg=1.0):
    """Triads (vp1, vp2, vp3) with vp2 swept along the great circle orthogonal to vp1."""
    u, w = _orthogonal_basis(vp1)
    ang = np.deg2rad(np.arange(0.0, 180.0, step_deg))
    vp2 = np.cos(ang)[:, None] * u + np.sin(ang)[:, None] * w
    vp3 = np.cross(vp1, vp2)
    return vp2, vp3


def _assign(C, R):
    """Axis index minimizing |c . vp| and that minimal value, for each line."""
    dots = np.abs(C @ R)
    return np.argmin(dots, axis=1), dots.min(axis=1)


def detect_mf_2line(lines, intr: Intrinsics, rng=None, iterations=300, grid: PolarGrid | None = None,
                    pairs=None, lam=None, frame_idx=-1, refine=True) -> ManhattanFrame | None:
    """RANSAC over line pairs; each pair fixes vp1 and vp2 is swept at 1 degree steps.

    Hypotheses are scored by total inlier length (scaled per line by ``lam``).
    With a ``grid`` the polar-grid mass at the three vanishing directions is
    added, both terms normalized by their totals: grid mass alone starves a
    vanishing point whose lines are nearly parallel in the image, since their
    votes carry a small sin(2 theta). ``pairs`` restricts the first vanishing
    point to the given index pairs.
    """
    if len(lines) < 4:
        return None
    rng = np.random.default_rng(0) if rng is None else rng
    C, ok = _coeff_matrix(lines, intr)
    lengths = np.array([s.length for s in lines]) * ok
    if lam is not None:
        lengths = lengths * np.asarray(lam, dtype=float)
    len_total = max(lengths.sum(), 1e-12)
    grid_total = max(grid.bins.sum(), 1e-12) if grid is not None else 1.0
    if pairs is None:
        pairs = list(itertools.combinations(np.flatnonzero(ok), 2))
    pairs = [(i, j) for i, j in pairs if ok[i] and ok[j]]
    if not pairs:
        return None
    if len(pairs) > iterations:
        pick = rng.choice(len(pairs), size=iterations, replace=False)
        pairs = [pairs[k] for k in pick]

    best, best_score = None, -np.inf
    for i, j in pairs:
        v = np.cross(C[i], C[j])
        nv = np.linalg.norm(v)
        if nv < 1e-6:
            continue
        vp1 = v / nv
        vp2, vp3 = _hypotheses_from_vp1(vp1)
        d1 = np.abs(C @ vp1)[None, :]
        d2 = np.abs(vp2 @ C.T)
        d3 = np.abs(vp3 @ C.T)
        inl = np.minimum(np.minimum(d1, d2), d3) < INLIER_SIN
        score = inl.astype(float) @ lengths
        if grid is not None:
            mass = grid.score(vp1[None])[0] + grid.score(vp2) + grid.score(vp3)
            score = score / len_total + mass / grid_total
        k = int(np.argmax(score))
        if score[k] > best_score:
            best_score = score[k]
            best = np.column_stack([vp1, vp2[k], vp3[k]])
    if best is None:
        return None

    R = nearest_rotation(best)
    axis, dmin = _assign(C[ok], R)
    inl = dmin < INLIER_SIN
    counts = np.bincount(axis[inl], minlength=3)
    if inl.sum() < MIN_INLIER_LINES or (counts >= 2).sum() < 2:
        return None
    if refine:
        R = _refine_until_stable(R, lines, intr)
        classes, _ = classify_lines(R, lines, intr, stamp=False)
        counts = np.array([len(c) for c in classes])
    return ManhattanFrame(R, tuple(int(c) for c in counts), frame_idx, True)


def _refine_until_stable(R, lines, intr, max_passes=5):
    """Alternate classification and refinement until the assignment stops changing."""
    last = None
    for _ in range(max_passes):
        classes, _ = classify_lines(R, lines, intr, stamp=False)
        key = [sorted(id(s) for s in c) for c in classes]
        if key == last:
            break
        last = key
        try:
            R = refine_mf(R, {a: classes[a] for a in range(3)}, intr)
        except InsufficientConstraints:
            break
    return R


# -- polar grid --

def _pair_weight(l1: LineSegment2D, l2: LineSegment2D, lam1, lam2):
    c = abs(float(l1.direction @ l2.direction))
    theta = np.arccos(np.clip(c, 0.0, 1.0))
    return (lam1 * l1.length) * (lam2 * l2.length) * np.sin(2 * theta)


def vote_polar_grid(grid: PolarGrid, l1: LineSegment2D, l2: LineSegment2D, lambda1, lambda2,
                    intr: Intrinsics) -> PolarGrid:
    """Add one line pair's weighted sphere intersection to ``grid``."""
    p = np.cross(line_sphere_coeffs(l1, intr), line_sphere_coeffs(l2, intr))
    nrm = np.linalg.norm(p)
    if nrm < 1e-9:
        raise ParallelLines("lines meet at the same interpretation plane")
    i, j = grid.index(p / nrm)
    grid.bins[i, j] += _pair_weight(l1, l2, lambda1, lambda2)
    return grid


def accumulate_polar_grid(lines, intr: Intrinsics, structural=None) -> PolarGrid:
    """Polar grid from every non-parallel pair; ``structural[k]`` selects lambda = 10."""
    grid = PolarGrid()
    n = len(lines)
    if n < 2:
        return grid
    C, ok = _coeff_matrix(lines, intr)
    lam = np.where(np.asarray(structural if structural is not None else [False] * n, dtype=bool),
                   STRUCTURAL_LAMBDA, COMMON_LAMBDA)
    L = np.array([s.length for s in lines]) * lam
    D = np.array([s.direction for s in lines])
    ii, jj = np.triu_indices(n, 1)
    P = np.cross(C[ii], C[jj])
    nrm = np.linalg.norm(P, axis=1)
    good = (nrm > 1e-9) & ok[ii] & ok[jj]
    P = P[good] / nrm[good, None]
    cosang = np.clip(np.abs(np.einsum("ij,ij->i", D[ii[good]], D[jj[good]])), 0.0, 1.0)
    w = L[ii[good]] * L[jj[good]] * np.sin(2 * np.arccos(cosang))
    bi, bj = grid.index(P)
    np.add.at(grid.bins, (bi, bj), w)
    return grid


# -- refinement and classification --

def refine_mf(r_init, classified, intr: Intrinsics, max_iters=20, tol=1e-8) -> np.ndarray:
    """Gauss-Newton on SO(3) minimizing sum_a sum_l len_l (c_l . vp_a)^2."""
    C, W, A = [], [], []
    for a in range(3):
        for seg in classified.get(a, []):
            try:
                C.append(line_sphere_coeffs(seg, intr))
            except DegenerateSegment:
                continue
            W.append(seg.length)
            A.append(a)
    if len(C) < 3 or len(set(A)) < 2:
        raise InsufficientConstraints(f"{len(C)} lines over {len(set(A))} axes")
    C, A = np.array(C), np.array(A)
    sw = np.sqrt(np.array(W) / np.mean(W))
    E = np.eye(3)[A]
    skewE = np.array([hat(e) for e in np.eye(3)])[A]
    R = np.array(r_init, dtype=float)
    for _ in range(max_iters):
        CR = C @ R
        r = sw * np.einsum("ij,ij->i", CR, E)
        J = -sw[:, None] * np.einsum("ij,ijk->ik", CR, skewE)
        delta = np.linalg.lstsq(J, -r, rcond=None)[0]
        R = R @ so3_exp(delta)
        if np.linalg.norm(delta) < tol:
            break
    return nearest_rotation(R)


def classify_lines(r_cm, lines, intr: Intrinsics, angle_thresh_deg=2.0, stamp=True):
    """Split ``lines`` by nearest vanishing direction. Returns ``([X, Y, Z], residue)``."""
    classes = [[], [], []]
    residue = []
    thr = np.sin(np.deg2rad(angle_thresh_deg))
    for seg in lines:
        try:
            c = line_sphere_coeffs(seg, intr)
        except DegenerateSegment:
            residue.append(seg)
            continue
        dots = np.abs(c @ r_cm)
        a = int(np.argmin(dots))
        if dots[a] < thr:
            classes[a].append(seg)
            if stamp:
                seg.axis = a
        else:
            residue.append(seg)
            if stamp:
                seg.axis = None
    return classes, residue


# -- canonical axis order --

def _signed_permutations():
    out = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            P = np.zeros((3, 3))
            for col, (row, s) in enumerate(zip(perm, signs)):
                P[row, col] = s
            if np.linalg.det(P) > 0:
                out.append(P)
    return out


SIGNED_PERMUTATIONS = _signed_permutations()


def canonicalize_axes(r, r_ref) -> np.ndarray:
    """``r @ P`` for the signed axis permutation P that best matches ``r_ref``."""
    M = np.asarray(r_ref).T @ np.asarray(r)
    scores = [np.trace(M @ P) for P in SIGNED_PERMUTATIONS]
    return np.asarray(r) @ SIGNED_PERMUTATIONS[int(np.argmax(scores))]


# -- tracking by detection --

def _axis_vp_from_tracked(C, ref=None):
    """Average of sign-aligned pairwise cross products of one axis' lines."""
    acc = np.zeros(3)
    first = None
    for i, j in itertools.combinations(range(len(C)), 2):
        v = np.cross(C[i], C[j])
        if first is None:
            first = v if ref is None else ref
        acc += v if v @ first >= 0 else -v
    n = np.linalg.norm(acc)
    return acc / n if n > 1e-12 else None


def _structural_case1(lines, intr, prev):
    by_axis = [[s for s in lines if s.axis == a] for a in range(3)]
    vps = []
    for a in range(3):
        C, ok = _coeff_matrix(by_axis[a], intr)
        ref = None if prev is None else prev.r_cm[:, a]
        v = _axis_vp_from_tracked(C[ok], ref)
        if v is None:
            return None
        vps.append(v)
    M = np.column_stack(vps)
    if np.linalg.det(M) < 0:
        M[:, 2] = -M[:, 2]
    return nearest_rotation(M)


def _classify_refine(r0, lines, intr, seed_thresh_deg=3.0):
    classes, _ = classify_lines(r0, lines, intr, angle_thresh_deg=seed_thresh_deg, stamp=False)
    R = refine_mf(r0, {a: classes[a] for a in range(3)}, intr)
    # second pass with the standard threshold around the refined frame
    classes, _ = classify_lines(R, lines, intr, stamp=False)
    return refine_mf(R, {a: classes[a] for a in range(3)}, intr)


def track_mf(state: MfTrackState, lines, intr: Intrinsics, backend_rot=None, r_cb=None, frame_idx=-1,
             rng=None):
    """One tracking step. ``lines`` carry axis labels from the previous frame's
    classification; ``backend_rot`` is the latest back-end body rotation R^W_b.

    Returns ``(ManhattanFrame or None, new MfTrackState)``; ``new.last_case``
    records the path taken ("1", "2", "3", "detect" or "none").
    """
    r_cb = np.eye(3) if r_cb is None else r_cb
    prev = state.prev
    counts = [sum(1 for s in lines if s.axis == a) for a in range(3)]
    R, case = None, "none"
    try:
        if all(n > 2 for n in counts):
            case = "1"
            R0 = _structural_case1(lines, intr, prev)
            if R0 is not None:
                R = _classify_refine(R0, lines, intr)
        elif any(n > 0 for n in counts):
            case = "2"
            structural = [s.axis is not None for s in lines]
            grid = accumulate_polar_grid(lines, intr, structural)
            # first vanishing point from pairs of lines that share a label
            same = [(i, j) for i, j in itertools.combinations(range(len(lines)), 2)
                    if lines[i].axis is not None and lines[i].axis == lines[j].axis]
            lam = np.where(structural, STRUCTURAL_LAMBDA, COMMON_LAMBDA)
            mf = detect_mf_2line(lines, intr, rng=rng, grid=grid, pairs=same or None, lam=lam,
                                 refine=False)
            if mf is not None:
                R0 = mf.r_cm if prev is None else canonicalize_axes(mf.r_cm, prev.r_cm)
                R = _classify_refine(R0, lines, intr)
        else:
            case = "3"
            if prev is not None:
                R = _classify_refine(prev.r_cm, lines, intr)
            elif backend_rot is not None:
                r_mw = np.eye(3) if state.r_mw_alignment is None else state.r_mw_alignment
                R = _classify_refine(r_cb @ backend_rot.T @ r_mw.T, lines, intr)
    except InsufficientConstraints:
        R = None

    if R is None:
        case = "detect"
        mf = detect_mf_2line(lines, intr, rng=rng, frame_idx=frame_idx)
        R = None if mf is None else mf.r_cm

    if R is None or not is_rotation(R, 1e-6):
        new = MfTrackState(None, state.consecutive_failures + 1, state.r_mw_alignment, "none")
        for s in lines:
            s.axis = None
        return None, new

    if prev is not None:
        R = canonicalize_axes(R, prev.r_cm)
    classes, _ = classify_lines(R, lines, intr)
    mf = ManhattanFrame(R, tuple(len(c) for c in classes), frame_idx, True)
    return mf, MfTrackState(mf, 0, state.r_mw_alignment, case)


# -- world alignment --

def align_world(r_mc, r_cb, r_wb) -> np.ndarray:
    """R^M_W = R^M_c R^c_b (R^W_b)^-1. ``r_mc`` is the transpose of ``ManhattanFrame.r_cm``."""
    return np.asarray(r_mc) @ np.asarray(r_cb) @ np.asarray(r_wb).T


def pose_to_mw(r_mw, r_wb) -> np.ndarray:
    return np.asarray(r_mw) @ np.asarray(r_wb)


def angle_of(r) -> float:
    return rotation_angle(r)


# -- verification --

def verify_mf(win: VerificationWindow, d_angle_deg=0.5):
    """Mean angle between Manhattan and odometry relative rotations to the centre frame.

    Returns ``(accept, error_deg)``.
    """
    n = win.half_width
    if n < 1 or len(win.entries) != 2 * n + 1:
        raise WindowTooSmall(f"need 2n+1 entries with n >= 1, got {len(win.entries)} for n={n}")
    mf_k, vio_k = win.entries[n]
    total = 0.0
    for i, (mf_i, vio_i) in enumerate(win.entries):
        if i == n:
            continue
        d_mf = mf_i @ mf_k.T
        d_vio = vio_i @ vio_k.T
        total += angle_of(d_mf @ d_vio.T)
    err = np.rad2deg(total / (2 * n))
    return bool(err < d_angle_deg), float(err)


def gravity_canonical(r_cm, gravity_dir_cam) -> np.ndarray:
    """Reorder MF columns so the column closest to gravity is z, pointing up (against gravity)."""
    g = np.asarray(gravity_dir_cam, dtype=float)
    g = g / np.linalg.norm(g)
    k = int(np.argmax(np.abs(r_cm.T @ g)))
    best = None
    for P in SIGNED_PERMUTATIONS:
        R = r_cm @ P
        if np.allclose(np.abs(R[:, 2]), np.abs(r_cm[:, k])) and R[:, 2] @ g < 0:
            if best is None or np.trace(P) > np.trace(best[1]):
                best = (R, P)
    return best[0]


def initial_validity(mf: ManhattanFrame, gravity_dir_cam, lines, intr: Intrinsics,
                     max_angle_deg=10.0, min_vertical=2) -> bool:
    """Accept a first detection only if one axis matches gravity and vertical lines support it."""
    R = gravity_canonical(mf.r_cm, gravity_dir_cam)
    g = np.asarray(gravity_dir_cam, dtype=float)
    g = g / np.linalg.norm(g)
    ang = np.rad2deg(np.arccos(np.clip(abs(R[:, 2] @ g), 0.0, 1.0)))
    if ang >= max_angle_deg:
        return False
    classes, _ = classify_lines(R, lines, intr, stamp=False)
    return len(classes[2]) >= min_vertical
