import numpy as np
import pytest

from mwvio import geom
from mwvio.factors import (
    FactorEval,
    fd_check,
    huber,
    line_reproj_residual,
    mf_rotation_residual,
    point_reproj_residual,
    relpose_odometry_residual,
    struct_line_residual,
)
from mwvio.geom import PluckerLine, RigidTransform, plucker_to_orthonormal, so3_exp
from mwvio.jacobians import CASES, T_CB, line_in_front, max_error, random_pose

def test_huber_values():
    assert huber(1.0) == 1.0
    assert huber(4.0) == 3.0
    assert huber(0.25) == 0.25


def test_huber_continuous_monotone():
    x = np.linspace(0, 20, 20001)
    y = huber(x)
    assert np.all(np.diff(y) >= 0)
    assert np.all(y[x >= 1] <= x[x >= 1] + 1e-15)
    assert huber(1 - 1e-12) == pytest.approx(huber(1 + 1e-12), abs=1e-10)


def test_line_residual_axis_aligned():
    # camera at origin, line y = 0 at depth; projected line v = 0
    line = plucker_to_orthonormal(PluckerLine.from_points([0, 0, 2.0], [1, 0, 2.0]))
    ev = line_reproj_residual(RigidTransform.identity(), line, [2, 3], [5, 3])
    assert np.allclose(ev.residual, [3, 3])
    ev = line_reproj_residual(RigidTransform.identity(), line, [2, 0], [-5, 0])
    assert np.allclose(ev.residual, [0, 0])


def test_line_residual_sign_scale_invariant():
    rng = np.random.default_rng(0)
    pose = random_pose(rng)
    o = line_in_front(rng, pose)
    L = geom.orthonormal_to_plucker(o)
    flipped = plucker_to_orthonormal(L.scaled(-2.0))
    a = line_reproj_residual(pose, o, [0.1, 0.2], [-0.3, 0.1], T_CB).residual
    b = line_reproj_residual(pose, flipped, [0.1, 0.2], [-0.3, 0.1], T_CB).residual
    assert np.allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("name", sorted(CASES))
def test_fd_jacobians(name):
    assert max_error(CASES[name], trials=100) < 1e-5


def test_mf_jacobian_translation_block_zero():
    rng = np.random.default_rng(3)
    fac, st = CASES["mf"](rng)
    J = fac(st).jacobians[0][1]
    assert J.shape == (3, 6) and np.all(J[:, 3:] == 0)


def test_mf_residual_examples():
    rng = np.random.default_rng(4)
    R = geom.random_rotation(rng)
    q = geom.quat_from_rot(R)
    assert np.allclose(mf_rotation_residual(q, q).residual, 0)
    # q_vio = q_mf composed with -0.01 rad about z gives +0.01 (q_mf q_vio^-1 = rotation by +0.01)
    q_vio = geom.quat_from_rot(R @ so3_exp([0, 0, -0.01]))
    q_mf_world = geom.quat_from_rot(so3_exp([0, 0, 0.01]))
    e = mf_rotation_residual(q_mf_world, geom.quat_from_rot(np.eye(3))).residual
    assert np.allclose(e, [0, 0, 0.01], atol=1e-5)
    assert np.linalg.norm(mf_rotation_residual(q, q_vio).residual) == pytest.approx(0.01, abs=1e-5)


def test_mf_residual_gauge_covariance():
    rng = np.random.default_rng(5)
    for _ in range(50):
        A, B, G = (geom.random_rotation(rng) for _ in range(3))
        e1 = mf_rotation_residual(geom.quat_from_rot(A), geom.quat_from_rot(B)).residual
        # right-multiplying both by G leaves q_mf q_vio^-1 unchanged
        e2 = mf_rotation_residual(geom.quat_from_rot(A @ G), geom.quat_from_rot(B @ G)).residual
        assert np.linalg.norm(e1 - e2) < 1e-9
        # left-multiplying conjugates the error: its norm is preserved
        e3 = mf_rotation_residual(geom.quat_from_rot(G @ A), geom.quat_from_rot(G @ B)).residual
        assert abs(np.linalg.norm(e3) - np.linalg.norm(e1)) < 1e-9


def test_point_residual_zero_at_consistent_geometry():
    rng = np.random.default_rng(6)
    host = random_pose(rng)
    ev = point_reproj_residual(host, host, 0.25, [0.1, -0.2], [0.1, -0.2], T_CB)
    assert np.allclose(ev.residual, 0, atol=1e-12)
    target = host @ RigidTransform(so3_exp([0.05, -0.1, 0.02]), [0.4, 0.1, -0.2])
    X_c = np.array([0.3, -0.2, 5.0])
    X_w = (host @ T_CB.inverse()).apply(X_c)
    p_t = (target @ T_CB.inverse()).inverse().apply(X_w)
    ev = point_reproj_residual(host, target, 1 / 5.0, X_c[:2] / 5.0, p_t[:2] / p_t[2], T_CB)
    assert np.allclose(ev.residual, 0, atol=1e-12)


def test_struct_residual_zero_for_line_through_vp():
    rng = np.random.default_rng(7)
    pose = random_pose(rng)
    T_wc = pose @ T_CB.inverse()
    d_w = geom.random_rotation(rng)[:, 0]
    p = T_wc.apply([0.3, 0.2, 4.0])
    line = plucker_to_orthonormal(PluckerLine(np.cross(p, d_w), d_w))
    vp_cam = T_wc.R.T @ d_w
    assert abs(struct_line_residual(pose, line, vp_cam, T_CB).residual[0]) < 1e-12


def test_odometry_zero_at_truth():
    rng = np.random.default_rng(8)
    pi, pj = random_pose(rng), random_pose(rng)
    ev = relpose_odometry_residual(pi, pj, pi.inverse() @ pj)
    assert np.allclose(ev.residual, 0, atol=1e-12)
    ident = RigidTransform.identity()
    assert np.allclose(relpose_odometry_residual(ident, ident, ident).residual, 0)


def test_fd_check_detects_corruption():
    rng = np.random.default_rng(9)
    fac, st = CASES["line"](rng)

    def corrupted(state):
        ev = fac(state)
        J = ev.jacobians[0][1].copy()
        J[0, 0] += 0.1 * max(1.0, np.abs(J).max())
        return FactorEval(ev.residual, [("pose", J)] + ev.jacobians[1:])

    assert fd_check(corrupted, st) > 1e-2


def test_fd_check_zero_residual_guard():
    # odometry at its optimum, identity poses: finite, no blow-up
    ident = RigidTransform.identity()
    err = fd_check(lambda st: relpose_odometry_residual(st["pose_i"], st["pose_j"], ident),
                   {"pose_i": ident, "pose_j": ident})
    assert np.isfinite(err) and err < 1e-5
