"""Forward IMU propagation and backward per-point motion compensation."""
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import kernels, manifold
from .errors import EmptyImu, MissingLeftImu, NonMonotonicStamps
from .state import ImuSample, compute_F_matrices, step_state, symmetrize


class Kind(IntEnum):
    PLANE = 0
    EDGE = 1

    @property
    def letter(self):
        return "P" if self is Kind.PLANE else "E"

    @classmethod
    def from_letter(cls, s):
        s = s.strip().upper()
        if s == "P":
            return cls.PLANE
        if s == "E":
            return cls.EDGE
        raise ValueError(f"unknown feature kind {s!r}")


@dataclass(frozen=True, slots=True)
class LidarPoint:
    stamp: float
    xyz: np.ndarray
    kind: Kind = Kind.PLANE


@dataclass(frozen=True)
class Extrinsic:
    """LiDAR-to-IMU transform: p_I = rot @ p_L + pos."""

    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rot", np.array(self.rot, dtype=float).reshape(3, 3))
        object.__setattr__(self, "pos", np.array(self.pos, dtype=float).reshape(3))

    def to_imu(self, p_L):
        return np.asarray(p_L) @ self.rot.T + self.pos

    def to_lidar(self, p_I):
        return (np.asarray(p_I) - self.pos) @ self.rot


@dataclass(frozen=True)
class RelPose:
    """Pose of the IMU frame at a point's stamp relative to the scan-end IMU frame."""

    rot: np.ndarray
    pos: np.ndarray


@dataclass
class ScanBundle:
    """One scan: feature points in their own instantaneous LiDAR frames plus IMU coverage.

    Points are stored column-wise (``stamps``, ``xyz``, ``kinds``) and IMU
    samples as arrays; :meth:`from_lists` accepts the record types.
    """

    stamps: np.ndarray
    xyz: np.ndarray
    kinds: np.ndarray
    imu_stamps: np.ndarray
    gyro: np.ndarray
    acc: np.ndarray
    t_begin: float
    t_end: float

    def __post_init__(self):
        self.stamps = np.ascontiguousarray(self.stamps, dtype=float)
        self.xyz = np.ascontiguousarray(self.xyz, dtype=float).reshape(-1, 3)
        self.kinds = np.asarray(self.kinds, dtype=np.int8)
        self.imu_stamps = np.ascontiguousarray(self.imu_stamps, dtype=float)
        self.gyro = np.ascontiguousarray(self.gyro, dtype=float).reshape(-1, 3)
        self.acc = np.ascontiguousarray(self.acc, dtype=float).reshape(-1, 3)
        if len(self.stamps) > 1 and np.any(np.diff(self.stamps) < 0):
            raise NonMonotonicStamps("point stamps must be non-decreasing")
        if len(self.imu_stamps) > 1 and np.any(np.diff(self.imu_stamps) <= 0):
            raise NonMonotonicStamps("IMU stamps must be strictly increasing")

    @classmethod
    def from_lists(cls, points, imu, t_begin, t_end):
        return cls(
            stamps=[p.stamp for p in points],
            xyz=np.array([p.xyz for p in points], dtype=float).reshape(-1, 3),
            kinds=[int(p.kind) for p in points],
            imu_stamps=[s.stamp for s in imu],
            gyro=np.array([s.gyro for s in imu], dtype=float).reshape(-1, 3),
            acc=np.array([s.acc for s in imu], dtype=float).reshape(-1, 3),
            t_begin=t_begin,
            t_end=t_end,
        )

    @property
    def points(self):
        return [LidarPoint(float(t), p.copy(), Kind(int(k)))
                for t, p, k in zip(self.stamps, self.xyz, self.kinds)]

    @property
    def imu(self):
        return [ImuSample(float(t), g.copy(), a.copy())
                for t, g, a in zip(self.imu_stamps, self.gyro, self.acc)]

    def __len__(self):
        return len(self.stamps)


def iter_forward(x, P, imu, t_end, Q, t_start=None):
    """Yield ``(stamp, x, P)`` after every propagation step.

    Sample ``imu[i]`` drives the interval from its stamp (or ``t_start`` if
    later) to the next sample's stamp; the last sample is held until ``t_end``.
    """
    if len(imu) == 0:
        raise EmptyImu("forward propagation needs at least one IMU sample")
    stamps = [s.stamp for s in imu]
    if any(b <= a for a, b in zip(stamps, stamps[1:])):
        raise NonMonotonicStamps("IMU stamps must be strictly increasing")
    if stamps[-1] > t_end:
        raise NonMonotonicStamps(f"IMU stamp {stamps[-1]} is after t_end={t_end}")
    Qm = Q.cov if hasattr(Q, "cov") else np.asarray(Q)
    P = np.array(P, dtype=float)
    for i, u in enumerate(imu):
        t0 = u.stamp if t_start is None else max(u.stamp, t_start)
        t1 = stamps[i + 1] if i + 1 < len(imu) else t_end
        dt = t1 - t0
        if dt <= 0.0:
            continue
        F_x, F_w = compute_F_matrices(x, u, dt)
        x = step_state(x, u, dt)
        P = symmetrize(F_x @ P @ F_x.T + F_w @ Qm @ F_w.T)
        yield t1, x, P


def forward_propagate(x, P, imu, t_end, Q, t_start=None):
    """Propagate state and covariance through ``imu`` up to ``t_end``."""
    out_x, out_P = x, symmetrize(np.array(P, dtype=float))
    for _, out_x, out_P in iter_forward(x, P, imu, t_end, Q, t_start):
        pass
    return out_x, out_P


def backward_relposes(scan, x_k):
    """Relative poses for every point of ``scan`` as arrays ``(rots, pos)``.

    The recursion runs once per unique point stamp, starting from the
    identity at ``scan.t_end`` and integrating backwards with the left IMU
    sample of each interval and biases frozen at the scan-end estimate.
    """
    uniq = np.unique(np.append(scan.stamps, scan.t_end))
    uniq = uniq[uniq <= scan.t_end]
    Rt = x_k.rot.T
    result = kernels.back_propagate(
        np.ascontiguousarray(uniq), scan.imu_stamps, scan.gyro, scan.acc,
        np.ascontiguousarray(x_k.bias_gyro), np.ascontiguousarray(x_k.bias_acc),
        Rt @ x_k.vel, Rt @ x_k.gravity)
    if result is None:
        raise MissingLeftImu("no IMU sample at or before the earliest point stamp")
    rots, pos = result
    where = np.searchsorted(uniq, scan.stamps)
    return rots[where], pos[where]


def backward_propagate(scan, x_k):
    """List of ``(stamp, RelPose)`` for each point of ``scan``."""
    rots, pos = backward_relposes(scan, x_k)
    return [(float(t), RelPose(R, p)) for t, R, p in zip(scan.stamps, rots, pos)]


def project_to_scan_end(p, rel, ext):
    """Express a point measured in its own LiDAR frame in the scan-end LiDAR frame."""
    xyz = p.xyz if isinstance(p, LidarPoint) else np.asarray(p, dtype=float)
    p_I = ext.rot @ xyz + ext.pos
    return ext.rot.T @ (rel.rot @ p_I + rel.pos - ext.pos)


def project_points(xyz, rots, pos, ext):
    """Vectorised :func:`project_to_scan_end` over ``(n, 3)`` points."""
    p_I = xyz @ ext.rot.T + ext.pos
    moved = np.einsum("nab,nb->na", rots, p_I) + pos
    return (moved - ext.pos) @ ext.rot


def undistort_scan(scan, x_k, ext):
    """Scan-end LiDAR coordinates of every point in ``scan``."""
    rots, pos = backward_relposes(scan, x_k)
    return project_points(scan.xyz, rots, pos, ext)


def rel_pose_error(a, b):
    """(rotation angle, translation norm) between two RelPoses."""
    return manifold.rotation_angle(a.rot.T @ b.rot), float(np.linalg.norm(a.pos - b.pos))
