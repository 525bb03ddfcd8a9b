import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwvio import geom
from mwvio.errors import DegeneratePlanes, LineThroughOrigin, SingularInput
from mwvio.geom import (
    PluckerLine,
    RigidTransform,
    make_plane,
    nearest_rotation,
    orthonormal_retract,
    orthonormal_to_plucker,
    plucker_from_planes,
    plucker_to_orthonormal,
    plucker_transform,
    project_line,
    so3_exp,
    so3_log,
)


def random_transform(rng):
    return RigidTransform(geom.random_rotation(rng), rng.normal(size=3))


def random_line(rng):
    return PluckerLine.from_points(rng.normal(size=3) * 3, rng.normal(size=3) * 3)


def test_so3_exp_examples():
    assert np.allclose(so3_exp([0, 0, 0]), np.eye(3))
    R = so3_exp([0, 0, np.pi / 2])
    assert np.allclose(R[0], [0, -1, 0], atol=1e-12)
    assert geom.is_rotation(R)


def test_so3_log_exp_round_trip():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        w = axis * rng.uniform(0, np.pi - 1e-3)
        worst = max(worst, np.linalg.norm(so3_log(so3_exp(w)) - w))
    assert worst < 1e-10


def test_so3_log_small_and_near_pi():
    for w in ([1e-9, 0, 0], [0, 2e-7, -1e-7], [np.pi - 1e-6, 0, 0], [0, 0, -(np.pi - 1e-5)]):
        assert np.allclose(so3_exp(so3_log(so3_exp(w))), so3_exp(w), atol=1e-9)


def test_nearest_rotation_examples():
    rng = np.random.default_rng(1)
    R = geom.random_rotation(rng)
    assert np.allclose(nearest_rotation(R), R, atol=1e-12)
    assert np.allclose(nearest_rotation(1.5 * np.eye(3)), np.eye(3))
    with pytest.raises(SingularInput):
        nearest_rotation(np.diag([1.0, 1.0, 0.0]))


def test_nearest_rotation_matches_brute_force():
    # oracle: local random search for the rotation minimizing ||X - M||_F
    rng = np.random.default_rng(2)
    for _ in range(5):
        R = geom.random_rotation(rng)
        M = R + rng.normal(scale=1e-3, size=(3, 3))
        best, best_cost = R, np.linalg.norm(R - M)
        step = 5e-3
        for _ in range(3000):
            cand = best @ so3_exp(rng.normal(scale=step, size=3))
            c = np.linalg.norm(cand - M)
            if c < best_cost:
                best, best_cost = cand, c
            step = max(step * 0.999, 1e-5)
        got = nearest_rotation(M)
        assert geom.rotation_angle(got.T @ R) < 1e-2
        assert geom.rotation_angle(got.T @ best) < 1e-3
        assert np.linalg.norm(got - M) <= best_cost + 1e-9


def test_nearest_rotation_reflection_input():
    M = np.diag([1.0, 1.0, -1.0]) + 1e-3
    Rn = nearest_rotation(M)
    assert geom.is_rotation(Rn)


def test_plucker_from_axis_planes():
    L = plucker_from_planes(make_plane([1, 0, 0], 0), make_plane([0, 1, 0], 0))
    assert np.allclose(L.n, 0)
    assert np.allclose(L.d / np.linalg.norm(L.d), [0, 0, -1])


def test_plucker_from_offset_planes():
    L = plucker_from_planes(make_plane([0, 0, 1], -1), make_plane([0, 1, 0], 0))
    d = L.d / np.linalg.norm(L.d)
    assert np.allclose(abs(d), [1, 0, 0])
    assert abs(L.n @ L.d) < 1e-12
    # n = p x d for p = (0, 0, 1)
    assert np.allclose(L.n, np.cross([0, 0, 1.0], L.d))


def test_plucker_from_planes_membership():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        p1 = make_plane(rng.normal(size=3), rng.normal())
        p2 = make_plane(rng.normal(size=3), rng.normal())
        L = plucker_from_planes(p1, p2)
        assert abs(L.n @ L.d) < 1e-9 * (1 + np.linalg.norm(L.n))
        # oracle: solve the two plane equations directly for points on the intersection
        A = np.vstack([p1[:3], p2[:3]])
        x0 = np.linalg.lstsq(A, -np.array([p1[3], p2[3]]), rcond=None)[0]
        direction = np.cross(p1[:3], p2[:3])
        for s in np.linspace(-5, 5, 100):
            x = x0 + s * direction
            assert abs(p1[:3] @ x + p1[3]) < 1e-9 and abs(p2[:3] @ x + p2[3]) < 1e-9
            worst = max(worst, np.linalg.norm(np.cross(x, L.d) - L.n))
    assert worst < 1e-9


def test_plucker_from_parallel_planes():
    with pytest.raises(DegeneratePlanes):
        plucker_from_planes(make_plane([0, 0, 1], 0), make_plane([0, 0, 2], -1))


def test_plucker_transform_examples():
    rng = np.random.default_rng(4)
    L = random_line(rng)
    same = plucker_transform(RigidTransform.identity(), L)
    assert np.allclose(same.n, L.n) and np.allclose(same.d, L.d)
    R = geom.random_rotation(rng)
    rot = plucker_transform(RigidTransform(R, np.zeros(3)), L)
    assert np.allclose(rot.n, R @ L.n) and np.allclose(rot.d, R @ L.d)


def test_plucker_transform_round_trip_and_constraint():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        T = random_transform(rng)
        L = random_line(rng)
        L2 = plucker_transform(T, L)
        assert abs(L2.n @ L2.d) < 1e-10 * max(1.0, np.linalg.norm(L2.n) * np.linalg.norm(L2.d))
        back = plucker_transform(T.inverse(), L2)
        assert np.allclose(back.n, L.n, atol=1e-10) and np.allclose(back.d, L.d, atol=1e-10)


def test_plucker_transform_matches_point_transform():
    rng = np.random.default_rng(6)
    T = random_transform(rng)
    p, q = rng.normal(size=3), rng.normal(size=3)
    L2 = plucker_transform(T, PluckerLine.from_points(p, q))
    ref = PluckerLine.from_points(T.apply(p), T.apply(q))
    assert np.allclose(L2.n, ref.n) and np.allclose(L2.d, ref.d)


def test_orthonormal_example():
    o = plucker_to_orthonormal(PluckerLine([0, -1, 0], [0, 0, 1]))
    assert o.phi == pytest.approx(1.0)
    assert geom.is_rotation(o.psi)


def test_orthonormal_round_trip_and_scale_invariance():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        L = random_line(rng)
        o = plucker_to_orthonormal(L)
        assert geom.is_rotation(o.psi)
        back = orthonormal_to_plucker(o)
        assert np.allclose(back.n / np.linalg.norm(back.n), L.n / np.linalg.norm(L.n), atol=1e-10)
        assert np.allclose(back.d / np.linalg.norm(back.d), L.d / np.linalg.norm(L.d), atol=1e-10)
        assert np.linalg.norm(back.n) / np.linalg.norm(back.d) == pytest.approx(
            np.linalg.norm(L.n) / np.linalg.norm(L.d), rel=1e-10)
        o3 = plucker_to_orthonormal(L.scaled(3.0))
        assert np.allclose(o3.psi, o.psi, atol=1e-12) and o3.phi == pytest.approx(o.phi, rel=1e-12)


def test_orthonormal_through_origin():
    with pytest.raises(LineThroughOrigin):
        plucker_to_orthonormal(PluckerLine([0, 0, 0], [1, 0, 0]))


def test_orthonormal_retract():
    rng = np.random.default_rng(8)
    o = plucker_to_orthonormal(random_line(rng))
    same = orthonormal_retract(o, np.zeros(4))
    assert np.allclose(same.psi, o.psi) and same.phi == o.phi
    doubled = orthonormal_retract(o, [0, 0, 0, np.log(2)])
    assert doubled.phi == pytest.approx(2 * o.phi)


def test_orthonormal_retract_first_order():
    # projected-line change scales linearly with the update size
    rng = np.random.default_rng(9)
    o = plucker_to_orthonormal(random_line(rng))
    direction = rng.normal(size=4)
    direction /= np.linalg.norm(direction)

    def dist(eps):
        a = orthonormal_to_plucker(o)
        b = orthonormal_to_plucker(orthonormal_retract(o, eps * direction))
        return np.linalg.norm(np.concatenate([b.n - a.n, b.d - a.d]))

    ratios = [dist(e) / e for e in (1e-3, 1e-4, 1e-5)]
    assert ratios[0] == pytest.approx(ratios[2], rel=1e-2)
    assert ratios[1] == pytest.approx(ratios[2], rel=1e-3)


def test_project_line_examples():
    assert np.allclose(project_line([0, 1, 0]), [0, 1, 0])
    l = project_line([1, 0, -0.5])
    # u = 0.5 satisfies the line for any v
    for v in (-1.0, 0.0, 2.0):
        assert abs(l @ [0.5, v, 1.0]) < 1e-15


def test_project_line_consistent_with_points():
    rng = np.random.default_rng(10)
    for _ in range(100):
        p = rng.normal(size=3) + [0, 0, 5]
        q = rng.normal(size=3) + [0, 0, 5]
        l = project_line(PluckerLine.from_points(p, q).n)
        for x in (p, q):
            assert abs(l @ (x / x[2])) < 1e-9 * np.linalg.norm(l)


def test_quaternion_helpers():
    rng = np.random.default_rng(11)
    A, B = geom.random_rotation(rng), geom.random_rotation(rng)
    qa, qb = geom.quat_from_rot(A), geom.quat_from_rot(B)
    assert np.allclose(geom.rot_from_quat(geom.quat_mul(qa, qb)), A @ B)
    assert np.allclose(geom.quat_left(qa) @ qb, geom.quat_mul(qa, qb))
    assert np.allclose(geom.quat_right(qb) @ qa, geom.quat_mul(qa, qb))
    assert np.allclose(geom.rot_from_quat(geom.quat_inv(qa)), A.T)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6), st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_rigid_transform_group_laws(a, b):
    Ta = RigidTransform(so3_exp(a[:3]), a[3:])
    Tb = RigidTransform(so3_exp(b[:3]), b[3:])
    ident = Ta.inverse() @ Ta
    assert np.allclose(ident.R, np.eye(3), atol=1e-9) and np.allclose(ident.t, 0, atol=1e-9)
    lhs = (Ta @ Tb) @ Ta
    rhs = Ta @ (Tb @ Ta)
    assert np.allclose(lhs.matrix(), rhs.matrix(), atol=1e-9)
    assert geom.is_rotation((Ta @ Tb).R)


def test_retract_local_inverse():
    rng = np.random.default_rng(12)
    T = random_transform(rng)
    delta = rng.normal(scale=0.3, size=6)
    assert np.allclose(T.local(T.retract(delta)), delta)
