"""Synthetic Manhattan-world scenes, trajectories and observations.

Ground truth lives in the Manhattan frame M (room axes). The odometry "world"
W differs from M by a yaw offset about gravity, mimicking an estimator whose
yaw is unobservable at start-up. Body frame: x forward, y left, z up.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from ..camera import Intrinsics
from ..errors import ConfigInvalid
from ..geom import RigidTransform, rot_x, rot_y, rot_z, so3_exp
from ..lineflow.segment import LineSegment2D

# camera z = body x (forward), camera x = -body y, camera y = -body z
R_CB_DEFAULT = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
T_CB_DEFAULT = RigidTransform(R_CB_DEFAULT, [0.0, 0.03, -0.05])
NEAR = 0.1
MIN_SEG_PX = 20.0


@dataclass
class SimConfig:
    seed: int = 0
    trajectory: str = "circle"  # circle | corridor
    radius: float = 1.0
    length: float = 8.0
    n_frames: int = 100
    dt: float = 0.1
    n_lines_per_axis: int = 60
    n_points: int = 150
    width: int = 640
    height: int = 480
    focal: float = 400.0
    pixel_noise: float = 1.0
    odom_rot_deg: float = 0.3
    odom_trans: float = 0.005
    gravity: tuple = (0.0, 0.0, -1.0)
    world_yaw_deg: float = 20.0
    room_half: tuple = (5.0, 5.0)
    room_height: float = 3.0
    shell_depth: float = 2.5

    def validate(self):
        sig = (self.pixel_noise, self.odom_rot_deg, self.odom_trans)
        if any(s < 0 for s in sig):
            raise ConfigInvalid("noise levels must be >= 0")
        if self.n_frames <= 0 or self.n_lines_per_axis <= 0 or self.n_points <= 0:
            raise ConfigInvalid("counts must be > 0")
        if self.trajectory not in ("circle", "corridor"):
            raise ConfigInvalid(f"unknown trajectory {self.trajectory!r}")
        if self.width < 32 or self.height < 32 or self.focal <= 0:
            raise ConfigInvalid("bad camera geometry")

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0,
                          self.width, self.height)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Scene:
    lines: np.ndarray  # (L, 2, 3) endpoints in M
    line_axes: np.ndarray  # (L,)
    points: np.ndarray  # (P, 3)


@dataclass
class Frame:
    idx: int
    timestamp: float
    gt_pose: RigidTransform  # T^M_b
    odom: RigidTransform | None  # noisy T_{b_{k-1}}^{-1} T_{b_k}
    points: dict = field(default_factory=dict)  # id -> pixel (2,)
    lines: dict = field(default_factory=dict)  # id -> pixel (2, 2) start/end
    line_axes: dict = field(default_factory=dict)  # id -> ground-truth axis
    image_path: str | None = None


@dataclass
class Dataset:
    config: SimConfig
    T_cb: RigidTransform
    frames: list
    init_pose: RigidTransform  # T^W_b0
    r_wm: np.ndarray  # R^W_M
    scene: Scene | None = None

    @property
    def intrinsics(self) -> Intrinsics:
        return self.config.intrinsics

    def gt_trajectory(self):
        from .evaluate import Trajectory
        return Trajectory.from_poses([f.timestamp for f in self.frames], [f.gt_pose for f in self.frames])


# -- scene --

def _shell_sample(rng, cfg: SimConfig, n):
    """Points near the walls, stratified by bearing from the room centre."""
    hx, hy = cfg.room_half
    bearing = 2 * np.pi * (np.arange(n) + rng.random(n)) / n
    rng.shuffle(bearing)
    c, s = np.cos(bearing), np.sin(bearing)
    # distance from the centre to the wall along each bearing
    wall = np.minimum(hx / np.maximum(np.abs(c), 1e-9), hy / np.maximum(np.abs(s), 1e-9))
    r = wall - rng.uniform(0.1, cfg.shell_depth, n)
    z = rng.uniform(0.2, cfg.room_height - 0.2, n)
    return np.column_stack([r * c, r * s, z])


def make_scene(cfg: SimConfig, rng) -> Scene:
    hx, hy = cfg.room_half
    lo = np.array([-hx, -hy, 0.0])
    hi = np.array([hx, hy, cfg.room_height])
    segs, axes = [], []
    for a in range(3):
        starts = _shell_sample(rng, cfg, cfg.n_lines_per_axis)
        for p in starts:
            ln = rng.uniform(1.0, 2.5)
            q = p.copy()
            q[a] += ln if rng.random() < 0.5 else -ln
            q = np.clip(q, lo + 0.05, hi - 0.05)
            if abs(q[a] - p[a]) < 0.3:
                q[a] = p[a] + (0.3 if p[a] + 0.3 < hi[a] else -0.3)
            segs.append([p, q])
            axes.append(a)
    return Scene(np.array(segs), np.array(axes), _shell_sample(rng, cfg, cfg.n_points))


# -- trajectory --

def make_trajectory(cfg: SimConfig):
    poses = []
    for k in range(cfg.n_frames):
        s = k / cfg.n_frames
        if cfg.trajectory == "circle":
            th = 2 * np.pi * s
            pos = np.array([cfg.radius * np.cos(th), cfg.radius * np.sin(th), 1.5 + 0.1 * np.sin(3 * th)])
            yaw = th + 0.15 * np.sin(2 * th)
        else:
            pos = np.array([-cfg.length / 2 + cfg.length * s, 0.3 * np.sin(2 * np.pi * s), 1.5])
            yaw = 0.2 * np.sin(2 * np.pi * s)
        pitch = np.deg2rad(5.0) * np.sin(4 * np.pi * s)
        roll = np.deg2rad(3.0) * np.sin(6 * np.pi * s)
        poses.append(RigidTransform(rot_z(yaw) @ rot_y(pitch) @ rot_x(roll), pos))
    return poses


# -- projection --

def _clip_segment_2d(a, b, w, h):
    """Liang-Barsky clip of a->b to [0, w-1] x [0, h-1]; None if outside."""
    d = b - a
    t0, t1 = 0.0, 1.0
    for p, q in ((-d[0], a[0]), (d[0], w - 1 - a[0]), (-d[1], a[1]), (d[1], h - 1 - a[1])):
        if abs(p) < 1e-12:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return a + t0 * d, a + t1 * d


def project_segment(T_cw: RigidTransform, p, q, intr: Intrinsics, min_len=MIN_SEG_PX):
    """Visible pixel segment of a 3D segment, or None."""
    pc, qc = T_cw.apply(p), T_cw.apply(q)
    if pc[2] < NEAR and qc[2] < NEAR:
        return None
    if pc[2] < NEAR or qc[2] < NEAR:
        t = (NEAR - pc[2]) / (qc[2] - pc[2])
        x = pc + t * (qc - pc)
        if pc[2] < NEAR:
            pc = x
        else:
            qc = x
    a = intr.denormalize(pc[:2] / pc[2])
    b = intr.denormalize(qc[:2] / qc[2])
    clipped = _clip_segment_2d(a, b, intr.width, intr.height)
    if clipped is None or np.linalg.norm(clipped[1] - clipped[0]) < min_len:
        return None
    return np.array(clipped)


def project_point(T_cw: RigidTransform, X, intr: Intrinsics, margin=2.0):
    pc = T_cw.apply(X)
    if pc[2] < NEAR:
        return None
    px = intr.denormalize(pc[:2] / pc[2])
    return px if intr.contains(px, margin) else None


def camera_from_world(T_wb: RigidTransform, T_cb: RigidTransform) -> RigidTransform:
    return T_cb @ T_wb.inverse()


# -- dataset --

def simulate_scene(cfg: SimConfig, T_cb: RigidTransform = T_CB_DEFAULT) -> Dataset:
    """Deterministic dataset from ``cfg``: scene, trajectory, noisy observations and odometry."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    scene = make_scene(cfg, rng)
    poses = make_trajectory(cfg)
    intr = cfg.intrinsics
    noise_rng = np.random.default_rng([cfg.seed, 1])
    frames = []
    for k, T in enumerate(poses):
        T_cw = camera_from_world(T, T_cb)
        fr = Frame(k, round(k * cfg.dt, 9), T, None)
        if k > 0:
            rel = poses[k - 1].inverse() @ T
            dR = so3_exp(noise_rng.normal(scale=np.deg2rad(cfg.odom_rot_deg), size=3))
            dt = noise_rng.normal(scale=cfg.odom_trans, size=3)
            fr.odom = RigidTransform(rel.R @ dR, rel.t + dt)
        for i, X in enumerate(scene.points):
            px = project_point(T_cw, X, intr)
            if px is not None:
                fr.points[i] = px + noise_rng.normal(scale=cfg.pixel_noise, size=2)
        for i, (p, q) in enumerate(scene.lines):
            seg = project_segment(T_cw, p, q, intr)
            if seg is not None:
                fr.lines[i] = seg + noise_rng.normal(scale=cfg.pixel_noise, size=(2, 2))
                fr.line_axes[i] = int(scene.line_axes[i])
        frames.append(fr)
    r_wm = rot_z(np.deg2rad(cfg.world_yaw_deg))
    T_wm = RigidTransform(r_wm, np.zeros(3))
    return Dataset(cfg, T_cb, frames, T_wm @ poses[0], r_wm, scene)


def frame_segments(frame: Frame, with_axes=False):
    """Observed line segments of a frame as ``LineSegment2D`` with landmark ids."""
    out = []
    for i, seg in frame.lines.items():
        out.append(LineSegment2D(seg[0], seg[1], i, frame.line_axes.get(i) if with_axes else None))
    return out


def synthetic_bundle(r_cm, n_per_axis, sigma_px, rng, intr: Intrinsics, n_outliers=0):
    """Image segments of random 3D lines along the Manhattan axes seen from rotation ``r_cm``.

    Returns ``(segments, labels)``; outlier segments carry label None.
    """
    segs, labels = [], []
    T_cw = RigidTransform(np.eye(3), np.zeros(3))
    for a in range(3):
        d = r_cm[:, a]
        got = 0
        tries = 0
        while got < n_per_axis:
            tries += 1
            if tries > 5000 * n_per_axis:
                raise RuntimeError("could not place lines for this rotation")
            z = rng.uniform(3.0, 8.0)
            px = np.array([rng.uniform(0, intr.width - 1), rng.uniform(0, intr.height - 1)])
            c = np.append(intr.normalize(px), 1.0) * z
            ln = rng.uniform(1.0, 3.0)
            seg = project_segment(T_cw, c - 0.5 * ln * d, c + 0.5 * ln * d, intr, min_len=40.0)
            if seg is None:
                continue
            seg = seg + rng.normal(scale=sigma_px, size=(2, 2))
            segs.append(LineSegment2D(seg[0], seg[1], len(segs)))
            labels.append(a)
            got += 1
    for _ in range(n_outliers):
        p = np.array([rng.uniform(0, intr.width - 1), rng.uniform(0, intr.height - 1)])
        ang = rng.uniform(0, np.pi)
        q = p + rng.uniform(40, 150) * np.array([np.cos(ang), np.sin(ang)])
        q = np.clip(q, 0, [intr.width - 1, intr.height - 1])
        segs.append(LineSegment2D(p, q, len(segs)))
        labels.append(None)
    return segs, labels
