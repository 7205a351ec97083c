"""Deterministic synthetic worlds, trajectories, IMU streams and feature scans.

The world frame coincides with the first IMU frame: every trajectory starts
at the origin with identity attitude, so ground truth is directly comparable
with the filter output.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import manifold
from .errors import NoVisibleFeatures, OutOfRange
from .propagation import Extrinsic, Kind, ScanBundle
from .state import GRAVITY, ImuSample, NavState

GRAVITY_W = np.array([0.0, 0.0, -GRAVITY])
NS = 1_000_000_000


# --- world --------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Bounded rectangle on the plane ``normal . x = offset``."""

    normal: np.ndarray
    offset: float
    center: np.ndarray
    axis_u: np.ndarray
    half_u: float
    half_v: float

    @classmethod
    def rectangle(cls, center, normal, axis_u, half_u, half_v):
        n = np.asarray(normal, float) / np.linalg.norm(normal)
        a = np.asarray(axis_u, float)
        a = a - n * (a @ n)
        a /= np.linalg.norm(a)
        c = np.asarray(center, float)
        return cls(n, float(n @ c), c, a, float(half_u), float(half_v))

    @property
    def axis_v(self):
        return np.cross(self.normal, self.axis_u)


@dataclass(frozen=True)
class Edge:
    direction: np.ndarray
    anchor: np.ndarray
    length: float


@dataclass
class WorldModel:
    planes: list = field(default_factory=list)
    edges: list = field(default_factory=list)

    @classmethod
    def room(cls, x=(-7.0, 4.0), y=(-5.0, 5.0), height=1.4, ceiling=2.6, pillars=True):
        """Closed box room around the origin; the floor is ``height`` below the start."""
        x0, x1 = x
        y0, y1 = y
        z0, z1 = -height, ceiling
        cx, cy, cz = (x0 + x1) / 2, (y0 + y1) / 2, (z0 + z1) / 2
        hx, hy, hz = (x1 - x0) / 2, (y1 - y0) / 2, (z1 - z0) / 2
        ex, ey, ez = np.eye(3)
        planes = [
            Plane.rectangle((cx, cy, z0), ez, ex, hx, hy),
            Plane.rectangle((cx, cy, z1), -ez, ex, hx, hy),
            Plane.rectangle((x0, cy, cz), ex, ey, hy, hz),
            Plane.rectangle((x1, cy, cz), -ex, ey, hy, hz),
            Plane.rectangle((cx, y0, cz), ey, ex, hx, hz),
            Plane.rectangle((cx, y1, cz), -ey, ex, hx, hz),
        ]
        edges = [Edge(ez, np.array([xc, yc, z0]), z1 - z0) for xc in x for yc in y]
        edges += [Edge(ex, np.array([x0, yc, z0]), x1 - x0) for yc in y]
        edges += [Edge(ey, np.array([xc, y0, z0]), y1 - y0) for xc in x]
        if pillars:
            # a slanted panel and free-standing vertical pillar edges break symmetry
            n = np.array([0.3, 0.5, 0.8])
            planes.append(Plane.rectangle((x0 + 1.5, y1 - 1.5, z0 + 1.0), n, np.cross(n, ez), 1.0, 0.8))
            for px, py in ((x0 + 2.0, y0 + 2.0), (x1 - 1.5, y0 + 1.5)):
                edges.append(Edge(ez, np.array([px, py, z0]), z1 - z0))
        return cls(planes, edges)

    @classmethod
    def single_plane(cls, height=1.4, half=30.0):
        """Floor only: translation along the floor and yaw are unobservable."""
        ex, _, ez = np.eye(3)
        return cls([Plane.rectangle((0.0, 0.0, -height), ez, ex, half, half)], [])

    @classmethod
    def corridor(cls, width=3.0, height=1.4, length=60.0):
        """Two parallel walls along x: motion along the corridor is unobservable."""
        ex, ey, ez = np.eye(3)
        w = width / 2
        return cls([
            Plane.rectangle((0.0, -w, 0.0), ey, ex, length / 2, 3.0),
            Plane.rectangle((0.0, w, 0.0), -ey, ex, length / 2, 3.0),
        ], [])

    @classmethod
    def preset(cls, name, height=1.4):
        presets = {"room": cls.room, "single_plane": cls.single_plane, "corridor": cls.corridor}
        if name not in presets:
            raise ValueError(f"unknown world preset {name!r}; choose from {sorted(presets)}")
        return presets[name](height=height)


# --- trajectories -------------------------------------------------------------

@dataclass
class TrajectorySpec:
    """Analytic motion with a static lead-in, smooth ramps and optional closure.

    ``kind`` is one of Static, Circle, Figure8, SplineWaypoints. The path
    parameter advances at ``2*pi/period`` rad/s (Circle, Figure8) or one
    waypoint per ``period`` seconds (SplineWaypoints) once ramped up. With
    ``closed=True`` the rate is adjusted so the motion ends exactly where it
    began.
    """

    kind: str = "Circle"
    radius: float = 1.8
    period: float = 8.0
    height: float = 1.4
    yaw_mode: str = "constant"
    duration: float = 30.0
    static_lead: float = 2.0
    static_tail: float = 0.0
    ramp: float = 1.0
    closed: bool = False
    waypoints: np.ndarray = None

    def __post_init__(self):
        if self.period <= 0.0:
            raise ValueError("period must be positive")
        if self.radius < 0.0:
            raise ValueError("radius must be non-negative")
        if self.kind not in ("Static", "Circle", "Figure8", "SplineWaypoints"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.yaw_mode not in ("constant", "tangent"):
            raise ValueError(f"unknown yaw mode {self.yaw_mode!r}")


class Trajectory:
    """Vectorised closed-form evaluation of a :class:`TrajectorySpec`."""

    def __init__(self, spec):
        self.spec = spec
        s = spec
        self.t_a = s.static_lead
        self.t_b = s.duration - s.static_tail
        self.ramp = min(s.ramp, max(0.0, (self.t_b - self.t_a) / 2))
        if s.kind == "SplineWaypoints":
            wp = np.asarray(s.waypoints, dtype=float)
            if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) < 2:
                raise ValueError("SplineWaypoints needs an (N >= 2, 3) waypoint array")
            if np.any(wp[0] != 0.0):
                wp = np.vstack([np.zeros(3), wp])
            self._spline = CubicSpline(np.arange(len(wp)), wp, bc_type="clamped")
            base = 1.0 / s.period
            target = len(wp) - 1.0
            closed = True
        else:
            base = 2.0 * np.pi / s.period
            target = None
            closed = s.closed
        move = max(self.t_b - self.t_a - self.ramp, 0.0)
        self.rate = 0.0 if s.kind == "Static" else base
        if closed and self.rate and move > 0:
            if target is None:
                laps = max(1, round(self.rate * move / (2 * np.pi)))
                target = 2 * np.pi * laps
            self.rate = target / move

    # phase and its derivatives
    def phase(self, t):
        t = np.asarray(t, dtype=float)
        W, Tr, ta, tb = self.rate, self.ramp, self.t_a, self.t_b
        ph = np.zeros_like(t)
        rt = np.zeros_like(t)
        ac = np.zeros_like(t)
        if W == 0.0:
            return ph, rt, ac
        if Tr > 0:
            up = (t >= ta) & (t < ta + Tr)
            s = (t[up] - ta) / Tr
            ph[up] = W * Tr * (s ** 3 - s ** 4 / 2)
            rt[up] = W * (3 * s ** 2 - 2 * s ** 3)
            ac[up] = W * (6 * s - 6 * s ** 2) / Tr
        mid = (t >= ta + Tr) & (t < tb - Tr)
        ph[mid] = W * Tr / 2 + W * (t[mid] - ta - Tr)
        rt[mid] = W
        total = W * (tb - ta - Tr)
        if Tr > 0:
            dn = (t >= tb - Tr) & (t < tb)
            s = (tb - t[dn]) / Tr
            ph[dn] = total - W * Tr * (s ** 3 - s ** 4 / 2)
            rt[dn] = W * (3 * s ** 2 - 2 * s ** 3)
            ac[dn] = -W * (6 * s - 6 * s ** 2) / Tr
        end = t >= tb
        ph[end] = total
        return ph, rt, ac

    def _path(self, phi):
        """Position and first/second derivatives with respect to the path parameter."""
        s = self.spec
        r = s.radius
        n = len(phi)
        z = np.zeros(n)
        if s.kind == "Static":
            return np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3))
        if s.kind == "Circle":
            c, sn = np.cos(phi), np.sin(phi)
            p = np.stack([r * (c - 1.0), r * sn, z], axis=1)
            d1 = np.stack([-r * sn, r * c, z], axis=1)
            d2 = np.stack([-r * c, -r * sn, z], axis=1)
            return p, d1, d2
        if s.kind == "Figure8":
            p = np.stack([r * np.sin(phi), 0.5 * r * np.sin(2 * phi), z], axis=1)
            d1 = np.stack([r * np.cos(phi), r * np.cos(2 * phi), z], axis=1)
            d2 = np.stack([-r * np.sin(phi), -2 * r * np.sin(2 * phi), z], axis=1)
            return p, d1, d2
        return self._spline(phi), self._spline(phi, 1), self._spline(phi, 2)

    def _yaw(self, phi, dphi, d1, d2):
        s = self.spec
        if s.yaw_mode == "constant" or s.kind == "Static":
            return np.zeros_like(phi), np.zeros_like(phi)
        if s.kind == "Circle":
            return phi.copy(), dphi.copy()
        heading = np.arctan2(d1[:, 1], d1[:, 0])
        h0 = self._heading0
        rate = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / (d1[:, 0] ** 2 + d1[:, 1] ** 2)
        return np.unwrap(heading - h0), rate * dphi

    @property
    def _heading0(self):
        _, d1, _ = self._path(np.zeros(1))
        return float(np.arctan2(d1[0, 1], d1[0, 0]))

    def _check(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < -1e-12) or np.any(t > self.spec.duration + 1e-12):
            raise OutOfRange(f"time outside [0, {self.spec.duration}]")
        return t

    def evaluate(self, t):
        """Arrays of rotation, position, velocity, acceleration and body rate at ``t``."""
        t = self._check(t)
        phi, dphi, ddphi = self.phase(t)
        p, d1, d2 = self._path(phi)
        vel = d1 * dphi[:, None]
        acc = d2 * (dphi ** 2)[:, None] + d1 * ddphi[:, None]
        yaw, yaw_rate = self._yaw(phi, dphi, d1, d2)
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.zeros((len(t), 3, 3))
        R[:, 0, 0], R[:, 0, 1] = c, -s
        R[:, 1, 0], R[:, 1, 1] = s, c
        R[:, 2, 2] = 1.0
        omega = np.zeros((len(t), 3))
        omega[:, 2] = yaw_rate
        return R, p, vel, acc, omega

    def path_length(self, n=20001):
        t = np.linspace(0.0, self.spec.duration, n)
        _, p, _, _, _ = self.evaluate(t)
        return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def sample_truth(spec, t):
    """Ground-truth state at ``t`` (zero biases, gravity (0, 0, -9.81))."""
    traj = spec if isinstance(spec, Trajectory) else Trajectory(spec)
    R, p, v, _, _ = traj.evaluate([t])
    return NavState(R[0], p[0], v[0], gravity=GRAVITY_W)


# --- sensors --------------------------------------------------------------------

@dataclass
class SensorSpec:
    imu_rate: float = 200.0
    scan_interval: float = 0.02
    points_per_scan: int = 200
    point_noise_sigma: float = 0.0
    gyro_noise: float = 0.0        # rad/s/sqrt(Hz)
    acc_noise: float = 0.0         # m/s^2/sqrt(Hz)
    gyro_walk: float = 0.0         # rad/s^2/sqrt(Hz)
    acc_walk: float = 0.0          # m/s^3/sqrt(Hz)
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    acc_bias: tuple = (0.0, 0.0, 0.0)
    extrinsic: Extrinsic = field(default_factory=Extrinsic)
    rng_seed: int = 0
    edge_fraction: float = 0.1
    max_range: float = 40.0
    imu_mode: str = "discrete"     # "discrete", "interval" (delta-angle/velocity) or "instant"

    def __post_init__(self):
        if self.imu_rate < 100:
            raise ValueError("imu_rate must be at least 100 Hz")
        if not 0.02 - 1e-12 <= self.scan_interval <= 0.1 + 1e-12:
            raise ValueError("scan_interval must lie in [0.02, 0.1] s")
        if self.imu_mode not in ("discrete", "interval", "instant"):
            raise ValueError(f"unknown imu_mode {self.imu_mode!r}")

    @classmethod
    def realistic(cls, **kw):
        base = dict(point_noise_sigma=0.02, gyro_noise=1e-3, acc_noise=1e-2,
                    gyro_walk=1e-5, acc_walk=1e-5)
        base.update(kw)
        return cls(**base)

    @property
    def imu_period_ns(self):
        return int(round(NS / self.imu_rate))

    @property
    def scan_interval_ns(self):
        return int(round(self.scan_interval * NS))

    def rng(self, stream):
        return np.random.default_rng([int(self.rng_seed), stream])


@dataclass
class ImuStream:
    """Synthesised IMU samples with the true biases that produced them."""

    stamps_ns: np.ndarray
    gyro: np.ndarray
    acc: np.ndarray
    bias_gyro: np.ndarray
    bias_acc: np.ndarray

    @property
    def stamps(self):
        return self.stamps_ns * 1e-9

    def samples(self):
        return [ImuSample(float(t), g, a) for t, g, a in zip(self.stamps, self.gyro, self.acc)]


def synth_imu_stream(spec, sensor):
    traj = spec if isinstance(spec, Trajectory) else Trajectory(spec)
    dt_ns = sensor.imu_period_ns
    dur_ns = int(round(traj.spec.duration * NS))
    n = dur_ns // dt_ns
    stamps_ns = np.arange(n, dtype=np.int64) * dt_ns
    t = stamps_ns * 1e-9
    dt = dt_ns * 1e-9
    R, p0, v, a, omega = traj.evaluate(t)
    if sensor.imu_mode in ("interval", "discrete"):
        R1, p1, v1, _, _ = traj.evaluate(np.minimum(stamps_ns + dt_ns, dur_ns) * 1e-9)
        gyro = np.array([manifold.log_map(r0.T @ r1) for r0, r1 in zip(R, R1)]) / dt
        if sensor.imu_mode == "interval":
            f_w = (v1 - v) / dt - GRAVITY_W
        else:
            # secant velocities: a zero-order-hold Euler step then lands on the true pose
            _, p2, _, _, _ = traj.evaluate(np.minimum(stamps_ns + 2 * dt_ns, dur_ns) * 1e-9)
            f_w = ((p2 - p1) - (p1 - p0)) / dt ** 2 - GRAVITY_W
    else:
        gyro = omega.copy()
        f_w = a - GRAVITY_W
    acc = np.einsum("nba,nb->na", R, f_w)

    rng = sensor.rng(0)
    rate = sensor.imu_rate
    white_g = rng.standard_normal((n, 3)) * sensor.gyro_noise * np.sqrt(rate)
    white_a = rng.standard_normal((n, 3)) * sensor.acc_noise * np.sqrt(rate)
    walk_g = rng.standard_normal((n, 3)) * sensor.gyro_walk * np.sqrt(dt)
    walk_a = rng.standard_normal((n, 3)) * sensor.acc_walk * np.sqrt(dt)
    bg = np.asarray(sensor.gyro_bias, float) + np.vstack([np.zeros(3), np.cumsum(walk_g, 0)[:-1]])
    ba = np.asarray(sensor.acc_bias, float) + np.vstack([np.zeros(3), np.cumsum(walk_a, 0)[:-1]])
    return ImuStream(stamps_ns, gyro + bg + white_g, acc + ba + white_a, bg, ba)


def synth_imu(spec, sensor):
    """IMU samples for the trajectory; deterministic for a fixed ``sensor.rng_seed``."""
    return synth_imu_stream(spec, sensor).samples()


def _raycast(world, origins, dirs, max_range):
    """Nearest plane hit along each ray; NaN rows where nothing is hit."""
    best = np.full(len(origins), np.inf)
    for pl in world.planes:
        denom = dirs @ pl.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (pl.offset - origins @ pl.normal) / denom
        hit = origins + t[:, None] * dirs
        rel = hit - pl.center
        ok = (np.abs(denom) > 1e-9) & (t > 1e-6) & (t <= max_range)
        ok &= (np.abs(rel @ pl.axis_u) <= pl.half_u) & (np.abs(rel @ pl.axis_v) <= pl.half_v)
        best = np.where(ok & (t < best), t, best)
    out = origins + best[:, None] * dirs
    out[~np.isfinite(best)] = np.nan
    return out


def synth_scan_ns(traj, sensor, world, t_begin_ns, t_end_ns, rng):
    """Feature points of one scan on the nanosecond grid.

    Returns ``(stamps_ns, xyz_L, kinds, world_xyz)``; stamps are uniform on
    (t_begin, t_end] with the last one exactly at t_end.
    """
    if not world.planes and not world.edges:
        raise NoVisibleFeatures("world has no planes or edges")
    n = sensor.points_per_scan
    span = t_end_ns - t_begin_ns
    stamps_ns = t_begin_ns + (span * np.arange(1, n + 1, dtype=np.int64)) // n
    R, p, _, _, _ = traj.evaluate(stamps_ns * 1e-9)
    ext = sensor.extrinsic
    origins = p + np.einsum("nab,b->na", R, ext.pos)
    world_xyz = np.full((n, 3), np.nan)
    kinds = np.zeros(n, dtype=np.int8)

    if world.edges and sensor.edge_fraction > 0:
        lengths = np.array([e.length for e in world.edges])
        pick_edge = rng.random(n) < sensor.edge_fraction
        idx = np.flatnonzero(pick_edge)
        which = rng.choice(len(world.edges), size=len(idx), p=lengths / lengths.sum())
        along = rng.random(len(idx))
        for row, e_i, s in zip(idx, which, along):
            e = world.edges[e_i]
            w = e.anchor + e.direction * (s * e.length)
            if np.linalg.norm(w - origins[row]) <= sensor.max_range:
                world_xyz[row] = w
                kinds[row] = int(Kind.EDGE)

    missing = np.flatnonzero(np.isnan(world_xyz[:, 0]))
    for _ in range(64):
        if len(missing) == 0 or not world.planes:
            break
        d = rng.standard_normal((len(missing), 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        hits = _raycast(world, origins[missing], d, sensor.max_range)
        world_xyz[missing] = hits
        kinds[missing] = int(Kind.PLANE)
        missing = np.flatnonzero(np.isnan(world_xyz[:, 0]))

    keep = ~np.isnan(world_xyz[:, 0])
    if not keep.any():
        raise NoVisibleFeatures("no feature visible from the sensor during this scan")
    stamps_ns, R, p, world_xyz, kinds = stamps_ns[keep], R[keep], p[keep], world_xyz[keep], kinds[keep]
    p_I = np.einsum("nba,nb->na", R, world_xyz - p)
    xyz_L = (p_I - ext.pos) @ ext.rot
    if sensor.point_noise_sigma > 0:
        xyz_L = xyz_L + rng.standard_normal(xyz_L.shape) * sensor.point_noise_sigma
    return stamps_ns, xyz_L, kinds, world_xyz


def synth_scan(spec, sensor, world, t_begin, t_end, imu=None, rng=None):
    """One :class:`ScanBundle` between ``t_begin`` and ``t_end`` seconds.

    ``scan.truth_world`` holds the noise-free world coordinates of each point.
    """
    traj = spec if isinstance(spec, Trajectory) else Trajectory(spec)
    imu = imu if imu is not None else synth_imu_stream(traj, sensor)
    rng = rng if rng is not None else sensor.rng(1)
    tb_ns, te_ns = int(round(t_begin * NS)), int(round(t_end * NS))
    stamps_ns, xyz, kinds, world_xyz = synth_scan_ns(traj, sensor, world, tb_ns, te_ns, rng)
    first = max(int(np.searchsorted(imu.stamps_ns, tb_ns, side="right")) - 1, 0)
    last = int(np.searchsorted(imu.stamps_ns, te_ns, side="right"))
    scan = ScanBundle(stamps_ns * 1e-9, xyz, kinds, imu.stamps[first:last],
                      imu.gyro[first:last], imu.acc[first:last], tb_ns * 1e-9, te_ns * 1e-9)
    scan.truth_world = world_xyz
    return scan


@dataclass
class SimDataset:
    """A complete synthetic run: IMU stream, timestamped points and ground truth."""

    trajectory: Trajectory
    sensor: SensorSpec
    world: WorldModel
    imu: ImuStream
    point_stamps_ns: np.ndarray
    points: np.ndarray
    kinds: np.ndarray
    scan_ends_ns: np.ndarray

    def truth_at(self, t):
        R, p, v, _, _ = self.trajectory.evaluate(np.atleast_1d(t))
        return R, p, v


def simulate(spec, sensor, world):
    """Generate a whole dataset; identical inputs give bitwise-identical arrays."""
    traj = spec if isinstance(spec, Trajectory) else Trajectory(spec)
    imu = synth_imu_stream(traj, sensor)
    rng = sensor.rng(1)
    step = sensor.scan_interval_ns
    dur = int(round(traj.spec.duration * NS))
    ends = np.arange(step, dur + 1, step, dtype=np.int64)
    st, xyz, kd = [], [], []
    begin = 0
    for end in ends:
        s, p, k, _ = synth_scan_ns(traj, sensor, world, begin, end, rng)
        st.append(s)
        xyz.append(p)
        kd.append(k)
        begin = end
    return SimDataset(traj, sensor, world, imu, np.concatenate(st), np.concatenate(xyz),
                      np.concatenate(kd), ends)
