"""Rotations, rigid transforms, Plücker lines and the 4-DOF orthonormal line.

Rotations are plain 3x3 numpy arrays. A ``RigidTransform`` ``T_ab`` maps
points expressed in frame ``b`` into frame ``a``: ``p_a = R @ p_b + t``.
Quaternions are Hamilton, stored ``(w, x, y, z)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import DegeneratePlanes, LineThroughOrigin, SingularInput

# Degeneracy thresholds, kept in one place.
ROT_TOL = 1e-9
PLANE_PARALLEL_RAD = 1e-6
NORM_EPS = 1e-12
SINGULAR_EPS = 1e-12


def hat(w):
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def vee(W):
    return np.array([W[2, 1] - W[1, 2], W[0, 2] - W[2, 0], W[1, 0] - W[0, 1]]) * 0.5


def so3_exp(w) -> np.ndarray:
    """Rodrigues formula."""
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < 1e-8:
        return np.eye(3) + W + 0.5 * (W @ W)
    return np.eye(3) + (np.sin(th) / th) * W + ((1.0 - np.cos(th)) / (th * th)) * (W @ W)


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    c = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    th = float(np.arccos(c))
    if th < 1e-6:
        # first-order series around identity
        return vee(R) * (1.0 + th * th / 6.0)
    if np.pi - th < 1e-4:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) * 0.5
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if vee(R) @ axis < 0:
            axis = -axis
        return axis * th
    return vee(R) * (th / np.sin(th))


def so3_right_jacobian_inv(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = float(np.linalg.norm(w))
    W = hat(w)
    if th < 1e-6:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    coef = 1.0 / (th * th) - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th))
    return np.eye(3) + 0.5 * W + coef * (W @ W)


def is_rotation(R, tol=ROT_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


def nearest_rotation(M) -> np.ndarray:
    """Orthogonal polar factor of ``M`` with det +1."""
    M = np.asarray(M, dtype=float)
    U, s, Vt = np.linalg.svd(M)
    if s.min() < SINGULAR_EPS:
        raise SingularInput(f"singular value {s.min():.3g} below {SINGULAR_EPS}")
    if np.linalg.det(U @ Vt) < 0:
        U = U.copy()
        U[:, -1] = -U[:, -1]
    return U @ Vt


def rotation_angle(R) -> float:
    """Geodesic angle of a rotation, radians."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)))


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def random_rotation(rng, max_angle=np.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0.0, max_angle))


# -- quaternions (Hamilton, w first) --

def quat_from_rot(R) -> np.ndarray:
    q = _ScipyRotation.from_matrix(np.asarray(R, dtype=float)).as_quat(scalar_first=True)
    return q if q[0] >= 0 else -q


def rot_from_quat(q) -> np.ndarray:
    return _ScipyRotation.from_quat(np.asarray(q, dtype=float), scalar_first=True).as_matrix()


def quat_mul(p, q) -> np.ndarray:
    pw, px, py, pz = p
    qw, qx, qy, qz = q
    return np.array([
        pw * qw - px * qx - py * qy - pz * qz,
        pw * qx + px * qw + py * qz - pz * qy,
        pw * qy - px * qz + py * qw + pz * qx,
        pw * qz + px * qy - py * qx + pz * qw,
    ])


def quat_inv(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]]) / (q @ q)


def quat_left(q) -> np.ndarray:
    """Matrix with ``quat_left(p) @ q == quat_mul(p, q)``."""
    w, x, y, z = q
    return np.array([[w, -x, -y, -z],
                     [x, w, -z, y],
                     [y, z, w, -x],
                     [z, -y, x, w]])


def quat_right(q) -> np.ndarray:
    """Matrix with ``quat_right(q) @ p == quat_mul(p, q)``."""
    w, x, y, z = q
    return np.array([[w, -x, -y, -z],
                     [x, w, z, -y],
                     [y, -z, w, x],
                     [z, y, -x, w]])


@dataclass(frozen=True)
class RigidTransform:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def apply(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def retract(self, delta) -> "RigidTransform":
        """Right-perturbed rotation, additive translation: tangent is (rot, trans)."""
        delta = np.asarray(delta, dtype=float)
        return RigidTransform(self.R @ so3_exp(delta[:3]), self.t + delta[3:6])

    def local(self, other: "RigidTransform") -> np.ndarray:
        """Inverse of ``retract``: ``self.retract(self.local(other)) == other``."""
        return np.concatenate([so3_log(self.R.T @ other.R), other.t - self.t])


def make_plane(normal, offset) -> np.ndarray:
    """Plane ``normal . x + offset = 0`` as a 4-vector with unit normal."""
    normal = np.asarray(normal, dtype=float)
    s = np.linalg.norm(normal)
    return np.concatenate([normal, [offset]]) / s


def plane_through(p0, p1, p2) -> np.ndarray:
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    nrm = np.cross(p1 - p0, p2 - p0)
    return make_plane(nrm, -nrm @ p0)


@dataclass(frozen=True)
class PluckerLine:
    n: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float).reshape(3))
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float).reshape(3))

    @classmethod
    def from_points(cls, p, q) -> "PluckerLine":
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        d = q - p
        return cls(np.cross(p, d), d)

    def closest_point(self) -> np.ndarray:
        return np.cross(self.d, self.n) / (self.d @ self.d)

    def scaled(self, s) -> "PluckerLine":
        return PluckerLine(self.n * s, self.d * s)


def plucker_from_planes(p1, p2) -> PluckerLine:
    """Line of intersection of two planes via the dual Plücker matrix."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    n1 = p1[:3] / np.linalg.norm(p1[:3])
    n2 = p2[:3] / np.linalg.norm(p2[:3])
    if np.linalg.norm(np.cross(n1, n2)) < np.sin(PLANE_PARALLEL_RAD):
        raise DegeneratePlanes("plane normals are parallel")
    Ls = np.outer(p1, p2) - np.outer(p2, p1)
    d = vee(Ls[:3, :3])
    n = Ls[:3, 3]
    return PluckerLine(n, d)


def plucker_transform(T: RigidTransform, L: PluckerLine) -> PluckerLine:
    Rd = T.R @ L.d
    return PluckerLine(T.R @ L.n + np.cross(T.t, Rd), Rd)


@dataclass(frozen=True)
class OrthonormalLine:
    psi: np.ndarray
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", np.asarray(self.psi, dtype=float).reshape(3, 3))
        object.__setattr__(self, "phi", float(self.phi))


def plucker_to_orthonormal(L: PluckerLine) -> OrthonormalLine:
    nn = np.linalg.norm(L.n)
    dn = np.linalg.norm(L.d)
    if dn < NORM_EPS:
        raise LineThroughOrigin("zero direction")
    if nn < NORM_EPS:
        raise LineThroughOrigin("line passes through the origin")
    c = np.cross(L.n, L.d)
    psi = np.column_stack([L.n / nn, L.d / dn, c / np.linalg.norm(c)])
    return OrthonormalLine(psi, nn / dn)


def orthonormal_to_plucker(o: OrthonormalLine) -> PluckerLine:
    """Plücker coordinates with unit direction and ``|n| = phi``."""
    return PluckerLine(o.phi * o.psi[:, 0], o.psi[:, 1].copy())


def orthonormal_retract(o: OrthonormalLine, delta) -> OrthonormalLine:
    delta = np.asarray(delta, dtype=float)
    return OrthonormalLine(o.psi @ so3_exp(delta[:3]), o.phi * np.exp(delta[3]))


def orthonormal_local(o: OrthonormalLine, other: OrthonormalLine) -> np.ndarray:
    return np.concatenate([so3_log(o.psi.T @ other.psi), [np.log(other.phi / o.phi)]])


def project_line(n_c) -> np.ndarray:
    """Image line coefficients of a camera-frame line moment; identity projection
    because observations live in normalized image coordinates."""
    return np.asarray(n_c, dtype=float).copy()
