"""Residuals, robust loss and analytic Jacobians for the sliding-window problem.

Every factor works on body poses ``T_wb`` (body -> world/Manhattan frame) with
the camera extrinsic ``T_cb`` held fixed. Pose tangents are ``(rot, trans)``:
rotation is right-perturbed, translation additive in the world frame (see
``RigidTransform.retract``). Line tangents are the 4-DOF orthonormal update.

The ``*_batch`` kernels evaluate N factors of one kind at once on stacked
arrays; the single-factor functions wrap them and return a ``FactorEval``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, ProjectionDegenerate
from .geom import (
    OrthonormalLine,
    RigidTransform,
    orthonormal_retract,
    quat_from_rot,
    quat_inv,
    quat_left,
    quat_mul,
    quat_right,
    rot_from_quat,
    so3_log,
    so3_right_jacobian_inv,
)

POSE_DIM, LINE_DIM, DEPTH_DIM = 6, 4, 1
MIN_DEPTH = 1e-6
LINE_NORM_EPS = 1e-12


@dataclass
class FactorEval:
    residual: np.ndarray
    jacobians: list = field(default_factory=list)  # [(block_id, matrix)]
    weight: np.ndarray | None = None  # square-root information

    def whitened(self):
        W = np.eye(len(self.residual)) if self.weight is None else self.weight
        return W @ self.residual, [(b, W @ J) for b, J in self.jacobians]


def huber(x):
    """Huber norm applied to a squared, whitened residual norm."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 1.0, x, 2.0 * np.sqrt(np.maximum(x, 1.0)) - 1.0)
    return float(out) if out.ndim == 0 else out


def huber_weight(x):
    """Derivative of ``huber``; scales residual and Jacobian by its square root."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 1.0, 1.0, 1.0 / np.sqrt(np.maximum(x, 1.0)))


def _skew_batch(v):
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def _mv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


def _mm(A, B):
    return np.einsum("...ij,...jk->...ik", A, B)


def _tr(A):
    return np.swapaxes(A, -1, -2)


def _sign(x):
    return np.where(x >= 0.0, 1.0, -1.0)


def line_camera_moment_batch(Rwb, twb, psi, phi, T_cb: RigidTransform):
    """Camera-frame line moment and its Jacobians w.r.t. pose and line tangents.

    Returns ``n_c (N,3)``, ``dn/dpose (N,3,6)``, ``dn/dline (N,3,4)``.
    """
    R_cb = T_cb.R
    t_bc = -R_cb.T @ T_cb.t
    n_w = phi[:, None] * psi[:, :, 0]
    d_w = psi[:, :, 1]
    c = twb + _mv(Rwb, np.broadcast_to(t_bc, twb.shape))
    m = n_w - np.cross(c, d_w)
    Rcw = R_cb @ _tr(Rwb)
    n_c = _mv(Rcw, m)

    N = len(phi)
    J_pose = np.empty((N, 3, 6))
    Rd = _mm(Rcw, _skew_batch(d_w))
    J_pose[:, :, :3] = R_cb @ _skew_batch(_mv(_tr(Rwb), m)) - _mm(Rd, Rwb @ _skew_batch(t_bc[None])[0])
    J_pose[:, :, 3:] = Rd

    # dm/dline = dn_w/dline + [d_w x]... via -c x d_w = d_w x c
    dn_w = np.zeros((N, 3, 4))
    dn_w[:, :, 1] = -phi[:, None] * psi[:, :, 2]
    dn_w[:, :, 2] = phi[:, None] * psi[:, :, 1]
    dn_w[:, :, 3] = n_w
    dd_w = np.zeros((N, 3, 4))
    dd_w[:, :, 0] = psi[:, :, 2]
    dd_w[:, :, 2] = -psi[:, :, 0]
    dm = dn_w - _mm(_skew_batch(c), dd_w)
    J_line = _mm(Rcw, dm)
    return n_c, J_pose, J_line


def _point_line_distance(l, p):
    """Signed-abs distance |l.p| / |l12| and its gradient w.r.t. ``l``."""
    rho = np.linalg.norm(l[:, :2], axis=1)
    dot = np.einsum("ni,ni->n", l, p)
    s = _sign(dot)
    r = s * dot / rho
    l12 = l.copy()
    l12[:, 2] = 0.0
    de_dl = s[:, None] * (p / rho[:, None] - dot[:, None] * l12 / rho[:, None] ** 3)
    return r, de_dl


def line_reproj_batch(Rwb, twb, psi, phi, p_start, p_end, T_cb):
    """Endpoint-to-projected-line distances, normalized image coordinates.

    Returns ``r (N,2)``, ``J_pose (N,2,6)``, ``J_line (N,2,4)``.
    """
    n_c, Jp, Jl = line_camera_moment_batch(Rwb, twb, psi, phi, T_cb)
    if np.any(np.linalg.norm(n_c[:, :2], axis=1) < LINE_NORM_EPS):
        raise ProjectionDegenerate("projected line has vanishing (l1, l2)")
    ones = np.ones((len(phi), 1))
    rs, gs = _point_line_distance(n_c, np.hstack([p_start, ones]))
    re, ge = _point_line_distance(n_c, np.hstack([p_end, ones]))
    r = np.stack([rs, re], 1)
    de = np.stack([gs, ge], 1)
    return r, _mm(de, Jp), _mm(de, Jl)


def struct_line_batch(Rwb, twb, psi, phi, vp_cam, T_cb):
    """Distance of the homogeneous vanishing point to the projected line.

    Returns ``r (N,)``, ``J_pose (N,6)``, ``J_line (N,4)``.
    """
    n_c, Jp, Jl = line_camera_moment_batch(Rwb, twb, psi, phi, T_cb)
    if np.any(np.linalg.norm(n_c[:, :2], axis=1) < LINE_NORM_EPS):
        raise ProjectionDegenerate("projected line has vanishing (l1, l2)")
    r, g = _point_line_distance(n_c, vp_cam)
    return r, np.einsum("ni,nij->nj", g, Jp), np.einsum("ni,nij->nj", g, Jl)


def point_reproj_batch(R_h, t_h, R_t, t_t, inv_depth, obs_h, obs_t, T_cb):
    """Inverse-depth point hosted in one frame, reprojected into another.

    Returns ``r (N,2)``, ``J_host (N,2,6)``, ``J_target (N,2,6)``, ``J_depth (N,2)``.
    """
    R_cb, t_cb = T_cb.R, T_cb.t
    R_bc = R_cb.T
    t_bc = -R_bc @ t_cb
    N = len(inv_depth)
    f = np.hstack([obs_h, np.ones((N, 1))])
    p_bh = (f / inv_depth[:, None]) @ R_bc.T + t_bc
    X = _mv(R_h, p_bh) + t_h
    p_bt = _mv(_tr(R_t), X - t_t)
    p_c = p_bt @ R_cb.T + t_cb
    z = p_c[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera("point behind target camera")
    pred = p_c[:, :2] / z[:, None]
    r = pred - obs_t

    dproj = np.zeros((N, 2, 3))
    dproj[:, 0, 0] = 1.0 / z
    dproj[:, 1, 1] = 1.0 / z
    dproj[:, :, 2] = -pred / z[:, None]
    dpc_dX = R_cb @ _tr(R_t)
    A = _mm(dproj, dpc_dX)

    J_t = np.empty((N, 2, 6))
    J_t[:, :, :3] = _mm(dproj, R_cb @ _skew_batch(p_bt))
    J_t[:, :, 3:] = -A
    J_h = np.empty((N, 2, 6))
    J_h[:, :, :3] = -_mm(A, _mm(R_h, _skew_batch(p_bh)))
    J_h[:, :, 3:] = A
    dX_dl = _mv(R_h, (-f / inv_depth[:, None] ** 2) @ R_bc.T)
    J_d = _mv(A, dX_dl)
    return r, J_h, J_t, J_d


def mf_rotation_batch(q_mf, q_vio):
    """``e = 2 vec(q_mf * q_vio^-1)`` and its Jacobian w.r.t. the VIO rotation tangent."""
    N = len(q_mf)
    r = np.empty((N, 3))
    J = np.zeros((N, 3, 6))
    for k in range(N):
        qi = quat_inv(q_vio[k])
        prod = quat_mul(q_mf[k], qi)
        s = 1.0 if prod[0] >= 0 else -1.0
        r[k] = 2.0 * s * prod[1:]
        # q_vio -> q_vio (x) (1, d/2)  =>  q_vio^-1 -> (1, -d/2) (x) q_vio^-1
        M = quat_left(q_mf[k]) @ quat_right(qi)
        J[k, :, :3] = -s * M[1:, 1:]
    return r, J


def odometry_batch(R_i, t_i, R_j, t_j, R_m, t_m):
    """Between-factor on body poses. Returns ``r (N,6)``, ``J_i (N,6,6)``, ``J_j (N,6,6)``."""
    N = len(t_i)
    r = np.empty((N, 6))
    J_i = np.zeros((N, 6, 6))
    J_j = np.zeros((N, 6, 6))
    for k in range(N):
        E = R_m[k].T @ R_i[k].T @ R_j[k]
        e = so3_log(E)
        Jri = so3_right_jacobian_inv(e)
        dt = R_i[k].T @ (t_j[k] - t_i[k])
        r[k, :3] = e
        r[k, 3:] = dt - t_m[k]
        J_j[k, :3, :3] = Jri
        J_i[k, :3, :3] = -Jri @ R_j[k].T @ R_i[k]
        J_i[k, 3:, :3] = np.array([[0, -dt[2], dt[1]], [dt[2], 0, -dt[0]], [-dt[1], dt[0], 0]])
        J_i[k, 3:, 3:] = -R_i[k].T
        J_j[k, 3:, 3:] = R_i[k].T
    return r, J_i, J_j


def direction_prior_batch(psi, axis_dir):
    """``d x e_axis`` tying a structural line's direction to its Manhattan axis."""
    d = psi[:, :, 1]
    r = np.cross(d, axis_dir)
    dd = np.zeros((len(d), 3, 4))
    dd[:, :, 0] = psi[:, :, 2]
    dd[:, :, 2] = -psi[:, :, 0]
    # d(d x a) = -[a]x dd
    J = -_mm(_skew_batch(axis_dir), dd)
    s = _sign(np.einsum("ni,ni->n", d, axis_dir))
    return r * s[:, None], J * s[:, None, None]


# -- single-factor wrappers --

def _pose_arrays(T: RigidTransform):
    return T.R[None], T.t[None]


def line_reproj_residual(pose: RigidTransform, line: OrthonormalLine, obs_start, obs_end,
                         T_cb: RigidTransform | None = None, sigma=None) -> FactorEval:
    T_cb = T_cb or RigidTransform.identity()
    R, t = _pose_arrays(pose)
    r, Jp, Jl = line_reproj_batch(R, t, line.psi[None], np.array([line.phi]),
                                  np.atleast_2d(obs_start), np.atleast_2d(obs_end), T_cb)
    W = None if sigma is None else np.eye(2) / sigma
    return FactorEval(r[0], [("pose", Jp[0]), ("line", Jl[0])], W)


def point_reproj_residual(host_pose: RigidTransform, target_pose: RigidTransform, inv_depth,
                          obs_host, obs_target, T_cb: RigidTransform | None = None, sigma=None) -> FactorEval:
    T_cb = T_cb or RigidTransform.identity()
    Rh, th = _pose_arrays(host_pose)
    Rt, tt = _pose_arrays(target_pose)
    r, Jh, Jt, Jd = point_reproj_batch(Rh, th, Rt, tt, np.array([float(inv_depth)]),
                                       np.atleast_2d(obs_host), np.atleast_2d(obs_target), T_cb)
    W = None if sigma is None else np.eye(2) / sigma
    return FactorEval(r[0], [("host", Jh[0]), ("target", Jt[0]), ("inv_depth", Jd[0][:, None])], W)


def mf_rotation_residual(q_mf, q_vio, sigma=None) -> FactorEval:
    r, J = mf_rotation_batch(np.atleast_2d(q_mf), np.atleast_2d(q_vio))
    W = None if sigma is None else np.eye(3) / sigma
    return FactorEval(r[0], [("pose", J[0])], W)


def struct_line_residual(pose: RigidTransform, line: OrthonormalLine, vp_cam,
                         T_cb: RigidTransform | None = None, sigma=None) -> FactorEval:
    """``vp_cam`` is the Manhattan-frame column of the line's axis, in the camera frame."""
    T_cb = T_cb or RigidTransform.identity()
    R, t = _pose_arrays(pose)
    r, Jp, Jl = struct_line_batch(R, t, line.psi[None], np.array([line.phi]),
                                  np.atleast_2d(vp_cam), T_cb)
    W = None if sigma is None else np.eye(1) / sigma
    return FactorEval(r, [("pose", Jp), ("line", Jl)], W)


def relpose_odometry_residual(pose_i: RigidTransform, pose_j: RigidTransform, meas: RigidTransform,
                              weight=None) -> FactorEval:
    r, Ji, Jj = odometry_batch(pose_i.R[None], pose_i.t[None], pose_j.R[None], pose_j.t[None],
                               meas.R[None], meas.t[None])
    return FactorEval(r[0], [("pose_i", Ji[0]), ("pose_j", Jj[0])], weight)


def direction_prior_residual(line: OrthonormalLine, axis_dir, sigma=None) -> FactorEval:
    r, J = direction_prior_batch(line.psi[None], np.atleast_2d(axis_dir))
    W = None if sigma is None else np.eye(3) / sigma
    return FactorEval(r[0], [("line", J[0])], W)


def mf_rotation_residual_from_rotations(R_mf, R_vio, sigma=None) -> FactorEval:
    return mf_rotation_residual(quat_from_rot(R_mf), quat_from_rot(R_vio), sigma)


# -- prior from marginalization --

@dataclass
class PriorBlock:
    """Linear factor ``r_p + h_p z`` on the tangent offsets ``z`` of ``keys`` from ``x0``.

    ``h_p`` is a square-root information matrix with ``len(r_p)`` rows; its
    columns follow ``keys`` in order, ``block_dim`` columns per block.
    """
    keys: list
    x0: list
    r_p: np.ndarray
    h_p: np.ndarray

    def __post_init__(self):
        self.r_p = np.asarray(self.r_p, dtype=float).reshape(-1)
        self.h_p = np.asarray(self.h_p, dtype=float).reshape(len(self.r_p), -1)
        if self.h_p.shape[1] != sum(block_dim(x) for x in self.x0):
            raise ValueError("prior columns do not match its blocks")


def local_offset(x0, x):
    """Tangent offset of ``x`` from ``x0`` and its derivative w.r.t. a tangent update of ``x``."""
    if isinstance(x0, RigidTransform):
        w = so3_log(x0.R.T @ x.R)
        D = np.eye(6)
        D[:3, :3] = so3_right_jacobian_inv(w)
        return np.concatenate([w, x.t - x0.t]), D
    if isinstance(x0, OrthonormalLine):
        w = so3_log(x0.psi.T @ x.psi)
        D = np.eye(4)
        D[:3, :3] = so3_right_jacobian_inv(w)
        return np.concatenate([w, [np.log(x.phi / x0.phi)]]), D
    return np.array([float(x) - float(x0)]), np.eye(1)


def prior_residual(prior: PriorBlock, values) -> FactorEval:
    """Evaluate ``prior`` at current block ``values`` (same order as ``prior.keys``)."""
    zs, Ds = zip(*(local_offset(a, b) for a, b in zip(prior.x0, values)))
    r = prior.r_p + prior.h_p @ np.concatenate(zs)
    jac, c = [], 0
    for key, D in zip(prior.keys, Ds):
        k = D.shape[0]
        jac.append((key, prior.h_p[:, c:c + k] @ D))
        c += k
    return FactorEval(r, jac)


# -- finite-difference oracle --

def retract_block(block, delta):
    """Apply a tangent update to any supported state block."""
    if isinstance(block, RigidTransform):
        return block.retract(delta)
    if isinstance(block, OrthonormalLine):
        return orthonormal_retract(block, delta)
    if isinstance(block, np.ndarray) and block.shape == (4,):
        # unit quaternion, right-perturbed like a rotation
        from .geom import so3_exp
        return quat_from_rot(rot_from_quat(block) @ so3_exp(delta[:3]))
    return float(block) + float(delta[0])


def block_dim(block):
    if isinstance(block, RigidTransform):
        return POSE_DIM
    if isinstance(block, OrthonormalLine):
        return LINE_DIM
    if isinstance(block, np.ndarray) and block.shape == (4,):
        return 3
    return DEPTH_DIM


def fd_check(factor, state: dict, step=1e-6, floor=1e-8) -> float:
    """Max relative error between analytic and central-difference Jacobians.

    ``factor(state)`` returns a ``FactorEval`` whose Jacobian block ids are keys
    of ``state``. Quaternion blocks are compared on their 3-DOF rotation tangent,
    so only the first three columns of a pose-shaped Jacobian are checked for them.
    """
    ev = factor(state)
    worst = 0.0
    for key, J in ev.jacobians:
        block = state[key]
        dim = block_dim(block)
        J = np.asarray(J, dtype=float).reshape(len(np.atleast_1d(ev.residual)), -1)[:, :dim]
        J_fd = np.empty_like(J)
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = step
            plus = dict(state, **{key: retract_block(block, e)})
            minus = dict(state, **{key: retract_block(block, -e)})
            J_fd[:, k] = (np.atleast_1d(factor(plus).residual) - np.atleast_1d(factor(minus).residual)) / (2 * step)
        scale = max(np.abs(J_fd).max(), floor)
        worst = max(worst, float(np.abs(J - J_fd).max() / scale))
    return worst
