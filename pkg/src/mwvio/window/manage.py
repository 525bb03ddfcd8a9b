"""Per-frame window maintenance: ingest, initialize landmarks, optimize, marginalize, prune."""
from __future__ import annotations

import logging

import numpy as np

from ..errors import (BehindCamera, DegeneratePlanes, InsufficientBaseline, InsufficientConstraints,
                      LineThroughOrigin, ProjectionDegenerate)
from ..factors import line_reproj_batch, point_reproj_batch
from ..geom import RigidTransform, plucker_to_orthonormal
from .marginalize import marginalize_oldest
from .solver import optimize
from .state import FramePacket, FrameState, LineLandmark, PointLandmark, WindowConfig, WindowState
from .triangulate import interpretation_plane, plane_angle_deg, triangulate_line, triangulate_point

log = logging.getLogger(__name__)


def _ray_angle_deg(T_cb, pose_a, ob_a, pose_b, ob_b):
    da = (pose_a @ T_cb.inverse()).R @ np.append(ob_a, 1.0)
    db = (pose_b @ T_cb.inverse()).R @ np.append(ob_b, 1.0)
    c = da @ db / (np.linalg.norm(da) * np.linalg.norm(db))
    return float(np.rad2deg(np.arccos(np.clip(c, -1.0, 1.0))))


def _init_point(w: WindowState, P: PointLandmark, cfg: WindowConfig):
    frames = sorted(P.observations)
    h = frames[0]
    Th = w.frame(h).pose
    angles = {f: _ray_angle_deg(cfg.T_cb, Th, P.observations[h], w.frame(f).pose, P.observations[f])
              for f in frames[1:]}
    j = max(angles, key=angles.get)
    if angles[j] < cfg.min_point_parallax_deg:
        return
    try:
        lam = triangulate_point([P.observations[h], P.observations[j]], [Th, w.frame(j).pose], cfg.T_cb)
    except (InsufficientBaseline, BehindCamera):
        return
    tgt = frames[1:]
    R = np.array([w.frame(f).pose.R for f in tgt])
    t = np.array([w.frame(f).pose.t for f in tgt])
    n = len(tgt)
    try:
        r, *_ = point_reproj_batch(np.repeat(Th.R[None], n, 0), np.repeat(Th.t[None], n, 0), R, t,
                                   np.full(n, lam), np.repeat(P.observations[h][None], n, 0),
                                   np.array([P.observations[f] for f in tgt]), cfg.T_cb)
    except BehindCamera:
        return
    if np.linalg.norm(r, axis=1).max() * cfg.focal > cfg.max_init_error_px:
        return
    P.host_frame, P.inv_depth = h, float(lam)


def _init_line(w: WindowState, L: LineLandmark, cfg: WindowConfig):
    frames = sorted(L.observations)
    planes = {}
    for f in frames:
        try:
            planes[f] = interpretation_plane(L.observations[f], w.frame(f).pose, cfg.T_cb)
        except DegeneratePlanes:
            pass
    best, pair = 0.0, None
    for a in range(len(frames)):
        for b in range(a + 1, len(frames)):
            fa, fb = frames[a], frames[b]
            if fa in planes and fb in planes:
                ang = plane_angle_deg(planes[fa], planes[fb])
                if ang > best:
                    best, pair = ang, (fa, fb)
    if pair is None or best < cfg.min_line_plane_deg:
        return
    fa, fb = pair
    try:
        line = plucker_to_orthonormal(triangulate_line(L.observations[fa], L.observations[fb],
                                                       w.frame(fa).pose, w.frame(fb).pose, cfg.T_cb))
    except (InsufficientBaseline, DegeneratePlanes, LineThroughOrigin):
        return
    if not _in_front(line, L, w, cfg):
        return
    n = len(frames)
    obs = np.array([L.observations[f] for f in frames])
    try:
        r, _, _ = line_reproj_batch(np.array([w.frame(f).pose.R for f in frames]),
                                    np.array([w.frame(f).pose.t for f in frames]),
                                    np.repeat(line.psi[None], n, 0), np.full(n, line.phi),
                                    obs[:, 0], obs[:, 1], cfg.T_cb)
    except ProjectionDegenerate:
        return
    if np.abs(r).max() * cfg.focal > cfg.max_init_error_px:
        return
    L.line = line
    if cfg.use_struct_lines:
        L.axis = L.labels.get(frames[-1])
        if w.in_manhattan:
            _audit_label(L, cfg)


def _in_front(line, L, w, cfg, min_depth=0.05):
    """Every observed endpoint ray meets the 3D line in front of its camera."""
    d = line.psi[:, 1]
    p0 = line.phi * np.cross(d, line.psi[:, 0])  # closest point to the origin
    for f, ob in L.observations.items():
        cam = w.frame(f).pose @ cfg.T_cb.inverse()
        for e in ob:
            ray = cam.R @ np.append(e, 1.0)
            A = np.column_stack([ray, -d])
            s, _ = np.linalg.lstsq(A, p0 - cam.t, rcond=None)[0]
            if s < min_depth:
                return False
    return True


def _audit_label(L: LineLandmark, cfg: WindowConfig):
    """Re-classify a structural line by its Manhattan-frame direction; drop the label past the threshold."""
    if L.axis is None or L.line is None:
        return
    c = np.abs(L.line.psi[:, 1])
    a = int(np.argmax(c))
    ang = np.rad2deg(np.arccos(min(c[a], 1.0)))
    L.axis = a if ang <= cfg.struct_audit_deg else None


def initialize_landmarks(w: WindowState, cfg: WindowConfig):
    for P in w.points.values():
        if not P.active and len(P.observations) >= 2:
            _init_point(w, P, cfg)
    for L in w.lines.values():
        if not L.active and len(L.observations) >= 2:
            _init_line(w, L, cfg)


def _prune(w: WindowState):
    in_prior = set(w.prior.keys) if w.prior is not None else set()
    newest = w.frames[-1].frame_idx
    for kind, store in (("point", w.points), ("line", w.lines)):
        for i in list(store):
            obs = store[i].observations
            if (kind, i) in in_prior:
                continue
            if len(obs) < 2 and newest not in obs:
                del store[i]


def manage_window(w: WindowState, packet: FramePacket, cfg: WindowConfig | None = None) -> WindowState:
    """Add one frame, then triangulate, optimize, marginalize when full and prune.

    The solver report of this step is left in ``last_report`` (None when the
    window was too thin to optimize).
    """
    cfg = cfg or WindowConfig()
    w = w.copy()
    if w.frames and packet.timestamp <= w.frames[-1].timestamp:
        raise ValueError("timestamps must increase")
    if packet.pose is not None:
        pose = packet.pose
    elif w.frames:
        last = w.frames[-1].pose
        pose = last @ packet.odom if packet.odom is not None else last
    else:
        pose = RigidTransform.identity()
    w.frames.append(FrameState(pose, packet.frame_idx, packet.timestamp, packet.odom))
    k = packet.frame_idx
    for i, ob in packet.points.items():
        P = w.points.get(i)
        if P is None:
            P = w.points[i] = PointLandmark(k)
        P.observations[k] = np.asarray(ob, dtype=float)
    for i, ob in packet.lines.items():
        L = w.lines.get(i)
        if L is None:
            L = w.lines[i] = LineLandmark()
        L.observations[k] = np.asarray(ob, dtype=float)
        L.labels[k] = packet.line_axes.get(i)
    ids = set(w.frame_ids())
    for f, r in packet.mfs.items():
        if f in ids:
            w.mfs[f] = np.asarray(r, dtype=float)

    initialize_landmarks(w, cfg)
    w.last_report = None
    try:
        w, rep = optimize(w, cfg)
        w.last_report = rep
    except InsufficientConstraints as e:
        log.debug("frame %d not optimized: %s", k, e)
    if w.in_manhattan:
        for L in w.lines.values():
            _audit_label(L, cfg)
    if len(w.frames) >= cfg.window_size:
        w = marginalize_oldest(w, cfg)
    _prune(w)
    return w
