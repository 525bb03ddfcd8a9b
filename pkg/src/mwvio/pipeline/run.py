"""End-to-end odometry: front-end, Manhattan-frame tracking and verification, window back-end."""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigInvalid
from ..geom import RigidTransform, so3_exp
from ..lineflow import DetectorParams, build_pyramid, detect_lines, read_pgm
from ..lineflow.flow import TrackStatus, track_lines
from ..lineflow.maintain import replenish
from ..manhattan import (MfTrackState, VerificationWindow, align_world, canonicalize_axes, classify_lines,
                         gravity_canonical, track_mf, verify_mf)
from ..window import FramePacket, WindowConfig, WindowState, manage_window, rotate_window
from .evaluate import Trajectory
from .sim import Dataset, frame_segments

log = logging.getLogger(__name__)

MF_CASES = ("1", "2", "3", "detect", "none")


@dataclass
class RunConfig:
    window_size: int = 10
    sigma_px: float = 1.5
    sigma_mf_deg: float = 1.0
    sigma_struct_px: float = 1.0
    sigma_dir_deg: float = 1.0
    sigma_odom_rot_deg: float = 0.3
    sigma_odom_trans: float = 0.005
    use_manhattan: bool = True
    use_struct_lines: bool = True
    min_line_plane_deg: float = 8.0
    pixels: bool = False
    max_lines: int = 100  # pixel mode: tracked lines are topped up to this count
    verify_half_width: int = 3
    d_angle_deg: float = 0.5
    align_frame: int = 10
    corrupt_frame: int = -1  # fault injection: perturb this frame's Manhattan frame
    corrupt_deg: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.verify_half_width < 1 or self.d_angle_deg <= 0 or self.max_lines < 1:
            raise ConfigInvalid("bad verification or front-end settings")

    def window_config(self, focal, T_cb) -> WindowConfig:
        names = {f.name for f in fields(WindowConfig)}
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.name in names}
        return WindowConfig(focal=focal, T_cb=T_cb, **kw)


class PixelFrontEnd:
    """Line detection and tracking on images; replaces the simulator's line observations."""

    def __init__(self, max_lines):
        self.params = DetectorParams(target_count=max_lines)
        self.pyr = None
        self.lines = []
        self.next_id = 0

    def step(self, img):
        pyr = build_pyramid(img)
        if self.pyr is None:
            found = detect_lines(img, self.params)
            lines = [s.copy(id=self.next_id + i, axis=None) for i, s in enumerate(found)]
        else:
            tracked = [s.copy(id=old.id, axis=old.axis)
                       for old, (s, _, st) in zip(self.lines, track_lines(self.pyr, pyr, self.lines))
                       if st == TrackStatus.TRACKED]
            lines = replenish(tracked, img, self.params, next_id=self.next_id)
        self.next_id = max([self.next_id - 1] + [s.id for s in lines]) + 1
        self.pyr, self.lines = pyr, lines
        return [s.copy() for s in lines]


def _frame_image(dataset: Dataset, frame, data_dir, seed):
    if frame.image_path and data_dir is not None:
        return read_pgm(Path(data_dir) / frame.image_path)
    from .raster import rasterize
    return rasterize(frame, dataset.scene, dataset.intrinsics, dataset.T_cb, seed=seed)


def run_vio(dataset: Dataset, config: RunConfig | None = None, data_dir=None):
    """Estimate the body trajectory of ``dataset``.

    Returns ``(Trajectory, diagnostics)``; the trajectory is in the Manhattan
    world frame once alignment has happened (the original world frame before,
    or throughout if it never does). One diagnostics dict per frame.
    """
    cfg = config or RunConfig()
    intr = dataset.intrinsics
    T_cb = dataset.T_cb
    wcfg = cfg.window_config(intr.fx, T_cb)
    g_world = np.asarray(dataset.config.gravity, dtype=float)
    n = cfg.verify_half_width
    front = PixelFrontEnd(cfg.max_lines) if cfg.pixels else None

    w = WindowState()
    mf_state = MfTrackState()
    labels = {}  # line id -> axis from the latest classification
    mf_meas = {}  # frame -> measured R^c_M (None when tracking failed)
    est = {}  # frame -> latest pose estimate
    R_mw = None
    diags = []

    for k, fr in enumerate(dataset.frames):
        rng = np.random.default_rng([cfg.seed, k])
        if front is not None:
            segs = front.step(_frame_image(dataset, fr, data_dir, cfg.seed))
        else:
            segs = frame_segments(fr)
        for s in segs:
            s.axis = labels.get(s.id)

        # Manhattan frame, passing the back-end rotation for Case 3 only once it is in the MW frame
        backend_rot = w.frames[-1].pose.R if (w.frames and R_mw is not None) else None
        fresh = mf_state.prev is None
        mf, mf_state = track_mf(mf_state, segs, intr, backend_rot, T_cb.R, k, rng)
        case = mf_state.last_case
        r_cm = None
        if mf is not None:
            if w.frames:
                R_pred = w.frames[-1].pose.R @ (fr.odom.R if fr.odom is not None else np.eye(3))
            else:
                R_pred = dataset.init_pose.R
            if R_mw is not None:
                r_cm = canonicalize_axes(mf.r_cm, T_cb.R @ R_pred.T)
            elif fresh:
                r_cm = gravity_canonical(mf.r_cm, T_cb.R @ R_pred.T @ g_world)
            else:
                r_cm = mf.r_cm
            if not np.array_equal(r_cm, mf.r_cm):
                classify_lines(r_cm, segs, intr)
                mf_state = replace(mf_state, prev=replace(mf, r_cm=r_cm))
        labels = {s.id: s.axis for s in segs}
        if r_cm is not None and k == cfg.corrupt_frame:
            axis = rng.normal(size=3)
            r_cm = r_cm @ so3_exp(np.deg2rad(cfg.corrupt_deg) * axis / np.linalg.norm(axis))
        mf_meas[k] = r_cm

        packet = FramePacket(
            fr.idx, fr.timestamp, fr.odom,
            {i: intr.normalize(p) for i, p in fr.points.items()},
            {s.id: intr.normalize(np.array([s.start, s.end])) for s in segs},
            {s.id: s.axis for s in segs},
            pose=dataset.init_pose if k == 0 else None)
        w = manage_window(w, packet, wcfg)
        for f in w.frames:
            est[f.frame_idx] = f.pose

        # verification of the frame n steps back, once its neighbours on both sides exist
        c = k - n
        verified, verr = False, None
        span = range(c - n, c + n + 1)
        if c - n >= 0 and all(mf_meas.get(j) is not None for j in span):
            entries = [(mf_meas[j], T_cb.R @ est[j].R.T) for j in span]
            verified, verr = verify_mf(VerificationWindow(n, entries), cfg.d_angle_deg)
            if verified and c in w.frame_ids():
                w.mfs[c] = mf_meas[c]

        aligned_now = False
        if R_mw is None and k >= cfg.align_frame:
            ready = [f for f in sorted(w.mfs, reverse=True) if f in est]
            if ready:
                c_al = ready[0]
                R_mw = align_world(w.mfs[c_al].T, T_cb.R, est[c_al].R)
                w = rotate_window(w, R_mw)
                w.in_manhattan = True
                T_mw = RigidTransform(R_mw, np.zeros(3))
                est = {j: T_mw @ T for j, T in est.items()}
                aligned_now = True

        rep = w.last_report
        diags.append({"frame": fr.idx, "mf_case": case, "verify_frame": c if verr is not None else None,
                      "verify_error_deg": verr, "verified": verified, "aligned": aligned_now,
                      "in_manhattan": w.in_manhattan,
                      "initial_cost": None if rep is None else rep.initial_cost,
                      "final_cost": None if rep is None else rep.final_cost,
                      "iterations": None if rep is None else rep.iterations})

    ts = [f.timestamp for f in dataset.frames]
    traj = Trajectory.from_poses(ts, [est[f.idx] for f in dataset.frames])
    return traj, diags
