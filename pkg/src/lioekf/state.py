"""18-DOF navigation state, IMU process model and its error-state Jacobians.

Error-state ordering (18 entries): attitude, position, velocity, gyro bias,
accel bias, gravity. Noise ordering (12 entries): gyro, accel, gyro-bias
walk, accel-bias walk.
"""
from dataclasses import dataclass, field

import numpy as np

from . import manifold
from .errors import DtOutOfRange

ROT = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
GRAV = slice(15, 18)
DIM = 18
NOISE_DIM = 12

MAX_DT = 0.1
GRAVITY = 9.81


def _vec3(v):
    a = np.array(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NavState:
    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -GRAVITY]))

    def __post_init__(self):
        rot = np.array(self.rot, dtype=float).reshape(3, 3)
        rot.setflags(write=False)
        object.__setattr__(self, "rot", rot)
        for name in ("pos", "vel", "bias_gyro", "bias_acc", "gravity"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))

    def euclidean(self):
        return np.concatenate([self.pos, self.vel, self.bias_gyro, self.bias_acc, self.gravity])

    def to_compound(self):
        return manifold.CompoundState(self.rot, self.euclidean())

    @classmethod
    def from_compound(cls, c):
        e = c.euclidean
        return cls(c.rot, e[0:3], e[3:6], e[6:9], e[9:12], e[12:15])

    def boxplus(self, dx):
        return NavState.from_compound(manifold.boxplus(self.to_compound(), dx))

    def boxminus(self, other):
        """self [-] other as an 18-vector."""
        return manifold.boxminus(self.to_compound(), other.to_compound())

    def replace(self, **kw):
        fields = dict(rot=self.rot, pos=self.pos, vel=self.vel, bias_gyro=self.bias_gyro,
                      bias_acc=self.bias_acc, gravity=self.gravity)
        fields.update(kw)
        return NavState(**fields)


@dataclass(frozen=True, slots=True)
class ImuSample:
    stamp: float
    gyro: np.ndarray
    acc: np.ndarray


@dataclass(frozen=True)
class ProcessNoise:
    """Covariance Q of the discrete noise vector w."""

    cov: np.ndarray

    @classmethod
    def from_densities(cls, gyro=1e-3, acc=1e-2, gyro_walk=1e-5, acc_walk=1e-5, rate=200.0):
        """Per-sample covariance for white noise of the given spectral densities.

        A density d sampled at ``rate`` Hz has discrete variance d^2 * rate; the
        simulator draws its noise the same way.
        """
        var = np.repeat(np.array([gyro, acc, gyro_walk, acc_walk], dtype=float) ** 2 * rate, 3)
        return cls(np.diag(var))

    @classmethod
    def default(cls, rate=200.0):
        return cls.from_densities(rate=rate)


def process_f(x, u, w=None):
    """Stacked continuous-time derivative used by the zero-order-hold step."""
    w = np.zeros(NOISE_DIM) if w is None else np.asarray(w, dtype=float)
    out = np.empty(DIM)
    out[ROT] = u.gyro - x.bias_gyro - w[0:3]
    out[POS] = x.vel
    out[VEL] = x.rot @ (u.acc - x.bias_acc - w[3:6]) + x.gravity
    out[BG] = w[6:9]
    out[BA] = w[9:12]
    out[GRAV] = 0.0
    return out


def _check_dt(dt):
    if not (0.0 < dt <= MAX_DT):
        raise DtOutOfRange(f"dt={float(dt)!r} outside (0, {MAX_DT}]")


def step_state(x, u, dt):
    """One zero-order-hold step with the noise set to zero."""
    _check_dt(dt)
    return x.boxplus(dt * process_f(x, u))


def compute_F_matrices(x, u, dt):
    """Return (F_x, F_w), the error-state transition and noise Jacobians of one step."""
    _check_dt(dt)
    w_hat = u.gyro - x.bias_gyro
    a_hat = u.acc - x.bias_acc
    R = x.rot
    I3dt = np.eye(3) * dt
    At_dt = manifold.a_matrix(w_hat * dt).T * dt

    F_x = np.eye(DIM)
    F_x[ROT, ROT] = manifold.exp_map(-w_hat * dt)
    F_x[ROT, BG] = -At_dt
    F_x[POS, VEL] = I3dt
    F_x[VEL, ROT] = -R @ manifold.skew(a_hat) * dt
    F_x[VEL, BA] = -R * dt
    F_x[VEL, GRAV] = I3dt

    F_w = np.zeros((DIM, NOISE_DIM))
    F_w[ROT, 0:3] = -At_dt
    F_w[VEL, 3:6] = -R * dt
    F_w[BG, 6:9] = I3dt
    F_w[BA, 9:12] = I3dt
    return F_x, F_w


def symmetrize(P):
    return 0.5 * (P + P.T)
