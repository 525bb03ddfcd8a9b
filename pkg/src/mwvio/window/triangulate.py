"""Two-view landmark initialization."""
from __future__ import annotations

import numpy as np

from ..errors import BehindCamera, DegeneratePlanes, InsufficientBaseline
from ..geom import PluckerLine, RigidTransform, plucker_from_planes, rotation_angle

MIN_BASELINE_M = 0.02
MIN_BASELINE_DEG = 2.0
MIN_RAY_ANGLE_DEG = 0.01
MIN_DEPTH = 1e-6


def _camera(T_wb: RigidTransform, T_cb: RigidTransform | None) -> RigidTransform:
    """World-from-camera transform."""
    return T_wb if T_cb is None else T_wb @ T_cb.inverse()


def check_baseline(T_i: RigidTransform, T_j: RigidTransform, T_cb=None):
    ci, cj = _camera(T_i, T_cb), _camera(T_j, T_cb)
    moved = np.linalg.norm(ci.t - cj.t)
    turned = np.rad2deg(rotation_angle(ci.R.T @ cj.R))
    if moved <= MIN_BASELINE_M and turned <= MIN_BASELINE_DEG:
        raise InsufficientBaseline(f"baseline {moved:.3f} m, {turned:.2f} deg")


def _homog(p):
    return np.append(np.asarray(p, dtype=float), 1.0)


def triangulate_point(obs, poses, T_cb=None) -> float:
    """Inverse depth of a point in the first camera from two normalized observations (midpoint method)."""
    T_i, T_j = poses
    check_baseline(T_i, T_j, T_cb)
    ci, cj = _camera(T_i, T_cb), _camera(T_j, T_cb)
    di = ci.R @ _homog(obs[0])
    dj = cj.R @ _homog(obs[1])
    sin_ang = np.linalg.norm(np.cross(di, dj)) / (np.linalg.norm(di) * np.linalg.norm(dj))
    if sin_ang < np.sin(np.deg2rad(MIN_RAY_ANGLE_DEG)):
        raise InsufficientBaseline("rays are parallel")
    # closest points c_i + s d_i and c_j + u d_j
    A = np.column_stack([di, -dj])
    s, u = np.linalg.lstsq(A, cj.t - ci.t, rcond=None)[0]
    if s <= MIN_DEPTH or u <= MIN_DEPTH:
        raise BehindCamera("triangulated point is behind a camera")
    X = 0.5 * (ci.t + s * di + cj.t + u * dj)
    z = ci.inverse().apply(X)[2]
    if z <= MIN_DEPTH:
        raise BehindCamera("triangulated point is behind the host camera")
    return 1.0 / z


def interpretation_plane(obs, T_wb: RigidTransform, T_cb=None) -> np.ndarray:
    """World plane through the camera centre and both back-projected endpoints."""
    c = _camera(T_wb, T_cb)
    n = np.cross(_homog(obs[0]), _homog(obs[1]))
    if np.linalg.norm(n) < 1e-12:
        raise DegeneratePlanes("segment endpoints coincide")
    n = c.R @ (n / np.linalg.norm(n))
    return np.append(n, -n @ c.t)


def plane_angle_deg(pi_a, pi_b) -> float:
    s = np.linalg.norm(np.cross(pi_a[:3], pi_b[:3]))
    return float(np.rad2deg(np.arcsin(min(s, 1.0))))


def triangulate_line(obs_i, obs_j, T_i: RigidTransform, T_j: RigidTransform, T_cb=None) -> PluckerLine:
    """World Plücker line from two views of a segment, as the intersection of their interpretation planes."""
    check_baseline(T_i, T_j, T_cb)
    return plucker_from_planes(interpretation_plane(obs_i, T_i, T_cb), interpretation_plane(obs_j, T_j, T_cb))
