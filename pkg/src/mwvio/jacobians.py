"""Random-state finite-difference audit of every factor's analytic Jacobians."""
from __future__ import annotations

import numpy as np

from . import geom
from .factors import (direction_prior_residual, fd_check, line_reproj_residual, mf_rotation_residual,
                      point_reproj_residual, relpose_odometry_residual, struct_line_residual)
from .geom import PluckerLine, RigidTransform, plucker_to_orthonormal, so3_exp

T_CB = RigidTransform(np.array([[0.0, -1, 0], [0, 0, -1], [1, 0, 0]]), [0.02, -0.01, 0.05])
TOLERANCE = 1e-5


def random_pose(rng, spread=1.0):
    return RigidTransform(geom.random_rotation(rng), rng.normal(scale=spread, size=3))


def line_in_front(rng, pose: RigidTransform, T_cb=T_CB):
    """A world line a few meters in front of the camera of ``pose``."""
    T_wc = pose @ T_cb.inverse()
    p = T_wc.apply(rng.normal(scale=0.5, size=3) + [0, 0, 4])
    q = T_wc.apply(rng.normal(scale=0.5, size=3) + [0, 0, 4])
    return plucker_to_orthonormal(PluckerLine.from_points(p, q))


def line_case(rng):
    pose = random_pose(rng)
    o = line_in_front(rng, pose)
    s, e = rng.normal(scale=0.3, size=2), rng.normal(scale=0.3, size=2)
    return (lambda st: line_reproj_residual(st["pose"], st["line"], s, e, T_CB)), {"pose": pose, "line": o}


def point_case(rng):
    host = random_pose(rng)
    target = host @ RigidTransform(so3_exp(rng.normal(scale=0.1, size=3)), rng.normal(scale=0.3, size=3))
    obs_h = rng.normal(scale=0.2, size=2)
    obs_t = rng.normal(scale=0.2, size=2)
    lam = 1.0 / rng.uniform(2, 6)
    fac = lambda st: point_reproj_residual(st["host"], st["target"], st["inv_depth"], obs_h, obs_t, T_CB)
    return fac, {"host": host, "target": target, "inv_depth": lam}


def mf_case(rng):
    R_mf = geom.random_rotation(rng)
    pose = RigidTransform(R_mf @ so3_exp(rng.normal(scale=0.2, size=3)), rng.normal(size=3))
    q_mf = geom.quat_from_rot(R_mf)
    return (lambda st: mf_rotation_residual(q_mf, geom.quat_from_rot(st["pose"].R))), {"pose": pose}


def struct_case(rng):
    pose = random_pose(rng)
    o = line_in_front(rng, pose)
    vp = rng.normal(size=3)
    vp /= np.linalg.norm(vp)
    return (lambda st: struct_line_residual(st["pose"], st["line"], vp, T_CB)), {"pose": pose, "line": o}


def odometry_case(rng):
    pi, pj = random_pose(rng), random_pose(rng)
    meas = RigidTransform(so3_exp(rng.normal(scale=0.5, size=3)), rng.normal(size=3))
    return (lambda st: relpose_odometry_residual(st["pose_i"], st["pose_j"], meas)), {"pose_i": pi, "pose_j": pj}


def direction_case(rng):
    pose = random_pose(rng)
    o = line_in_front(rng, pose)
    axis = np.eye(3)[rng.integers(3)]
    return (lambda st: direction_prior_residual(st["line"], axis)), {"line": o}


CASES = {"line": line_case, "point": point_case, "mf": mf_case, "struct": struct_case,
         "odometry": odometry_case, "direction": direction_case}


def max_error(case, trials=100, seed=0) -> float:
    rng = np.random.default_rng(seed)
    return max(fd_check(*case(rng)) for _ in range(trials))


def jacobian_report(trials=100, seed=0) -> dict:
    """Worst relative error per factor over ``trials`` random states."""
    return {name: max_error(case, trials, seed) for name, case in CASES.items()}
