"""Trajectories and absolute trajectory error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NoOverlap
from ..geom import RigidTransform, quat_from_rot, rot_from_quat

ASSOC_MAX_DT = 0.01


@dataclass
class Trajectory:
    timestamps: np.ndarray  # (N,)
    positions: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4) Hamilton, w first

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.quats = np.asarray(self.quats, dtype=float).reshape(-1, 4)
        if len(self.timestamps) > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def from_poses(cls, timestamps, poses) -> "Trajectory":
        return cls(timestamps, [p.t for p in poses], [quat_from_rot(p.R) for p in poses])

    def poses(self):
        return [RigidTransform(rot_from_quat(q), p) for p, q in zip(self.positions, self.quats)]

    def transformed(self, T: RigidTransform) -> "Trajectory":
        return Trajectory.from_poses(self.timestamps, [T @ p for p in self.poses()])


def associate(t_est, t_gt, max_dt=ASSOC_MAX_DT):
    """Nearest-neighbour timestamp pairs within ``max_dt``; each gt stamp used once."""
    t_gt = np.asarray(t_gt)
    pairs, used = [], set()
    for i, t in enumerate(t_est):
        j = int(np.searchsorted(t_gt, t))
        cands = [c for c in (j - 1, j) if 0 <= c < len(t_gt)]
        if not cands:
            continue
        c = min(cands, key=lambda c: abs(t_gt[c] - t))
        if abs(t_gt[c] - t) <= max_dt and c not in used:
            used.add(c)
            pairs.append((i, c))
    return pairs


def umeyama_rigid(src, dst):
    """Rotation and translation minimizing sum ||dst - (R src + t)||^2 (no scale)."""
    mu_s, mu_d = src.mean(0), dst.mean(0)
    H = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(H)
    S = np.eye(3)
    S[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def ate_rmse(est: Trajectory, gt: Trajectory, max_dt=ASSOC_MAX_DT) -> float:
    pairs = associate(est.timestamps, gt.timestamps, max_dt)
    if len(pairs) < 3:
        raise NoOverlap(f"only {len(pairs)} associated timestamps")
    ie, ig = map(np.array, zip(*pairs))
    P, Q = est.positions[ie], gt.positions[ig]
    R, t = umeyama_rigid(P, Q)
    err = Q - (P @ R.T + t)
    return float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
