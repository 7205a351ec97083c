"""Manifold algebra on SO(3) x R^n.

Rotations are plain 3x3 numpy arrays; tangent vectors are 3-vectors in
radians. All functions are pure and return fresh arrays.
"""
from dataclasses import dataclass

import numpy as np

from .errors import AngleNearPi

# Taylor-branch thresholds on the rotation-vector norm.
EXP_SMALL_ANGLE = 1e-7
A_INV_SMALL_ANGLE = 1e-6
# Log is rejected when the angle is within this distance of pi.
PI_MARGIN = 1e-9
ORTHO_TOL = 1e-9

_I3 = np.eye(3)


def skew(v):
    """Return the matrix K with K @ w == cross(v, w)."""
    x, y, z = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    """Inverse of :func:`skew` applied to the antisymmetric part of ``m``."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def exp_map(r):
    """Rodrigues exponential of a rotation vector.

    Below ``EXP_SMALL_ANGLE`` the second-order series I + K + K^2/2 is used.
    """
    r = np.asarray(r, dtype=float)
    theta = float(np.linalg.norm(r))
    K = skew(r)
    if theta < EXP_SMALL_ANGLE:
        return _I3 + K + 0.5 * (K @ K)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return _I3 + s * K + c * (K @ K)


def rotation_angle(R):
    """Angle of ``R`` in [0, pi], robust at both ends of the range."""
    sin_part = np.linalg.norm(vee(R))
    cos_part = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(sin_part, cos_part))


def log_map(R):
    """Rotation vector of ``R`` with norm in [0, pi).

    Raises:
        AngleNearPi: if the angle lies within ``PI_MARGIN`` of pi.
    """
    R = np.asarray(R, dtype=float)
    theta = rotation_angle(R)
    if np.pi - theta < PI_MARGIN:
        raise AngleNearPi(f"rotation angle {float(theta)!r} is within {PI_MARGIN} of pi")
    w = vee(R)
    if theta < EXP_SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    if theta < 3.0:
        return w * (theta / np.sin(theta))
    # Near pi the antisymmetric part vanishes; recover the axis from R + R^T.
    B = 0.5 * (R + R.T) - np.cos(theta) * _I3
    col = int(np.argmax(np.diag(B)))
    axis = B[:, col] / np.sqrt(B[col, col] * (1.0 - np.cos(theta)))
    axis /= np.linalg.norm(axis)
    if np.dot(axis, w) < 0.0:
        axis = -axis
    return theta * axis


def a_matrix_inv(u):
    """A(u)^-1 = I - K/2 + (1 - alpha(|u|)) K^2 / |u|^2, alpha(m) = (m/2) cot(m/2).

    This is the inverse of the SO(3) left Jacobian. For |u| below
    ``A_INV_SMALL_ANGLE`` the limit alpha ~ 1 - m^2/12 is used.
    """
    u = np.asarray(u, dtype=float)
    theta = float(np.linalg.norm(u))
    K = skew(u)
    if theta < A_INV_SMALL_ANGLE:
        return _I3 - 0.5 * K + (K @ K) / 12.0
    half = 0.5 * theta
    alpha = half * np.cos(half) / np.sin(half)
    return _I3 - 0.5 * K + ((1.0 - alpha) / (theta * theta)) * (K @ K)


def a_matrix(u):
    """A(u), the SO(3) left Jacobian, in closed form."""
    u = np.asarray(u, dtype=float)
    theta = float(np.linalg.norm(u))
    K = skew(u)
    if theta < A_INV_SMALL_ANGLE:
        return _I3 + 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (_I3 + ((1.0 - np.cos(theta)) / t2) * K
            + ((theta - np.sin(theta)) / (t2 * theta)) * (K @ K))


def orthonormality_error(R):
    return float(np.linalg.norm(R.T @ R - _I3))


def orthonormalize(R, tol=ORTHO_TOL):
    """Project ``R`` back onto SO(3) by polar decomposition if it drifted past ``tol``."""
    if orthonormality_error(R) <= tol:
        return R
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0.0:
        U[:, -1] = -U[:, -1]
        Q = U @ Vt
    return Q


@dataclass(frozen=True)
class CompoundState:
    """An element of SO(3) x R^n."""

    rot: np.ndarray
    euclidean: np.ndarray

    @property
    def dim(self):
        return 3 + len(self.euclidean)


def boxplus(x, u):
    """x [+] u: rotation R Exp(r), euclidean part a + b."""
    u = np.asarray(u, dtype=float)
    if u.shape != (x.dim,):
        raise ValueError(f"increment must have shape ({x.dim},), got {u.shape}")
    rot = orthonormalize(x.rot @ exp_map(u[:3]))
    return CompoundState(rot, np.asarray(x.euclidean, dtype=float) + u[3:])


def boxminus(x, y):
    """x [-] y: (Log(R_y^T R_x), a_x - a_y), so that y [+] (x [-] y) == x."""
    r = log_map(y.rot.T @ x.rot)
    return np.concatenate([r, np.asarray(x.euclidean, float) - np.asarray(y.euclidean, float)])
