"""Sliding-window state: frames, landmarks, Manhattan measurements and the prior."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigInvalid
from ..factors import PriorBlock
from ..geom import OrthonormalLine, RigidTransform


@dataclass
class WindowConfig:
    window_size: int = 10
    focal: float = 400.0  # px, converts pixel sigmas to normalized coordinates
    sigma_px: float = 1.5  # point and line observations
    sigma_mf_deg: float = 1.0
    sigma_struct_px: float = 1.0
    sigma_dir_deg: float = 1.0
    sigma_odom_rot_deg: float = 0.3
    sigma_odom_trans: float = 0.005
    use_manhattan: bool = True
    use_struct_lines: bool = True
    lm_lambda0: float = 1e-4
    lm_max_iters: int = 50
    lm_rel_tol: float = 1e-6
    fix_first: bool | None = None  # None: hold the first pose only while there is no prior
    min_landmarks: int = 10
    min_point_parallax_deg: float = 1.0
    min_line_plane_deg: float = 8.0  # weaker pairs leave flat valleys that stall the solver
    max_init_error_px: float = 10.0  # a new landmark must reproject this well in all its views
    struct_audit_deg: float = 5.0
    T_cb: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.window_size < 2:
            raise ConfigInvalid("window_size must be at least 2")
        for name in ("focal", "sigma_px", "sigma_mf_deg", "sigma_struct_px", "sigma_dir_deg",
                     "sigma_odom_rot_deg", "sigma_odom_trans"):
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"{name} must be positive")
        if self.lm_max_iters < 1 or self.lm_lambda0 <= 0:
            raise ConfigInvalid("bad solver settings")


@dataclass
class FrameState:
    pose: RigidTransform  # T_wb, body to world (Manhattan frame once aligned)
    frame_idx: int
    timestamp: float
    odom: RigidTransform | None = None  # measured motion from the previous frame


@dataclass
class PointLandmark:
    host_frame: int
    inv_depth: float | None = None  # None until triangulated
    observations: dict = field(default_factory=dict)  # frame_idx -> normalized (2,)

    @property
    def active(self):
        return self.inv_depth is not None


@dataclass
class LineLandmark:
    line: OrthonormalLine | None = None  # world frame; None until triangulated
    axis: int | None = None  # structural label, frozen at classification
    observations: dict = field(default_factory=dict)  # frame_idx -> normalized (2, 2)
    labels: dict = field(default_factory=dict)  # frame_idx -> label from that frame's Manhattan frame

    @property
    def active(self):
        return self.line is not None


@dataclass
class FramePacket:
    """Everything the front-end hands over for one frame."""
    frame_idx: int
    timestamp: float
    odom: RigidTransform | None = None
    points: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    line_axes: dict = field(default_factory=dict)
    mfs: dict = field(default_factory=dict)  # frame_idx -> verified R^c_M, possibly for older frames
    pose: RigidTransform | None = None  # initial guess; default chains odometry


@dataclass
class WindowState:
    frames: list = field(default_factory=list)
    points: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)
    prior: PriorBlock | None = None
    mfs: dict = field(default_factory=dict)  # frame_idx -> R^c_M
    linear_factors: list = field(default_factory=list)  # extra PriorBlock-shaped Gaussian factors
    in_manhattan: bool = False
    last_report: object = None  # solver report of the latest manage_window step

    def frame_ids(self):
        return [f.frame_idx for f in self.frames]

    def frame(self, idx) -> FrameState:
        for f in self.frames:
            if f.frame_idx == idx:
                return f
        raise KeyError(idx)

    def copy(self) -> "WindowState":
        return copy.deepcopy(self)

    def block_value(self, key):
        kind, i = key
        if kind == "pose":
            return self.frame(i).pose
        if kind == "line":
            return self.lines[i].line
        return self.points[i].inv_depth


def rotate_window(w: WindowState, R) -> WindowState:
    """Express the whole window in a frame rotated by ``R`` (new = R old).

    Rotation tangents are right-perturbed and line tangents live on the
    line's own frame, so only the translation columns of the prior change.
    """
    R = np.asarray(R, dtype=float)
    T = RigidTransform(R, np.zeros(3))
    out = w.copy()
    for f in out.frames:
        f.pose = T @ f.pose
    for L in out.lines.values():
        if L.line is not None:
            L.line = OrthonormalLine(R @ L.line.psi, L.line.phi)
    blocks = [out.prior] if out.prior is not None else []
    for P in blocks + out.linear_factors:
        c = 0
        x0 = []
        for key, x in zip(P.keys, P.x0):
            if key[0] == "pose":
                P.h_p[:, c + 3:c + 6] = P.h_p[:, c + 3:c + 6] @ R.T
                x0.append(T @ x)
                c += 6
            elif key[0] == "line":
                x0.append(OrthonormalLine(R @ x.psi, x.phi))
                c += 4
            else:
                x0.append(x)
                c += 1
        P.x0 = x0
    return out
