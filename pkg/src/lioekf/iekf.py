"""Iterated Kalman measurement update against the feature map.

The gain is evaluated in information form, (H^T R^-1 H + P^-1)^-1 H^T R^-1,
whose cost grows linearly with the number of measurements; the classic
P H^T (H P H^T + R)^-1 form is kept for cross-checking and benchmarking.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernels, manifold
from .errors import NoCorrespondences, NotStatic, SingularInnovation, SingularPrior, TooShort
from .feature_map import Correspondence, MatchConfig, match_points, transform_to_global
from .propagation import Kind
from .state import BA, BG, DIM, GRAV, POS, ROT, VEL, NavState, ProcessNoise

COND_LIMIT = 1e12
EDGE_REGULARIZATION = 1e-6


@dataclass(frozen=True)
class MeasurementNoise:
    """Isotropic standard deviation of a LiDAR point, in meters."""

    sigma_point: float = 0.02

    def __post_init__(self):
        if not self.sigma_point > 0.0:
            raise ValueError("sigma_point must be positive")

    def plane_var(self):
        return self.sigma_point ** 2

    def edge_cov(self, u):
        G = manifold.skew(u)
        return self.sigma_point ** 2 * (G @ G.T + EDGE_REGULARIZATION * np.eye(3))

    def edge_info_batch(self, u):
        """Closed-form inverse of ``edge_cov`` for unit directions ``u`` of shape (m, 3)."""
        uu = np.einsum("ni,nj->nij", u, u)
        eye = np.eye(3)[None]
        s2 = self.sigma_point ** 2
        return ((eye - uu) / (1.0 + EDGE_REGULARIZATION) + uu / EDGE_REGULARIZATION) / s2


@dataclass
class IekfConfig:
    epsilon: float = 1e-3
    max_iterations: int = 10
    residual_gate: float = 0.5
    match: MatchConfig = field(default_factory=MatchConfig)
    debug: bool = False

    def __post_init__(self):
        if not self.epsilon > 0.0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    def match_config(self):
        m = self.match
        return MatchConfig(m.k, self.residual_gate, m.plane_ratio, m.plane_max_dist,
                           m.edge_ratio, m.rank_floor)


@dataclass
class UpdateResult:
    x: NavState
    P: np.ndarray
    iterations_used: int
    effective_points: int
    converged: bool
    P_prior: np.ndarray = None          # (J^-1) P_hat (J^-T) of the final iteration
    last_step: float = np.inf           # |x^{k+1} [-] x^k| of the final iteration
    jacobian_errors: list = field(default_factory=list)


# --- measurement model ------------------------------------------------------

def _lever(x, ext, p_Lk):
    """IMU-frame coordinates of scan-end LiDAR points."""
    return ext.to_imu(p_Lk)


def measurement_jacobian(x, ext, p_Lk, corr):
    """H_j = G_j [ -R skew(p_I), I, 0 ] with p_I the point in the IMU frame."""
    p_I = ext.rot @ np.asarray(p_Lk, dtype=float) + ext.pos
    G = corr.projector()
    H = np.zeros((G.shape[0], DIM))
    H[:, ROT] = -G @ x.rot @ manifold.skew(p_I)
    H[:, POS] = G
    return H


def _jacobian_blocks(x, p_I, m):
    """Non-zero (attitude, position) columns of H for all matches.

    Returns the plane rows ``(n_p, 6)`` and edge blocks ``(n_e, 3, 6)``.
    """
    planes = m.planes()
    up = m.u[planes]
    Hp = np.empty((len(up), 6))
    # -u^T R skew(p) == cross(p, R^T u)
    Hp[:, :3] = np.cross(p_I[planes], up @ x.rot)
    Hp[:, 3:] = up

    ue = m.u[~planes]
    pe = p_I[~planes]
    n_e = len(ue)
    Gu = np.zeros((n_e, 3, 3))
    Gu[:, 0, 1], Gu[:, 0, 2] = -ue[:, 2], ue[:, 1]
    Gu[:, 1, 0], Gu[:, 1, 2] = ue[:, 2], -ue[:, 0]
    Gu[:, 2, 0], Gu[:, 2, 1] = -ue[:, 1], ue[:, 0]
    Sp = np.zeros((n_e, 3, 3))
    Sp[:, 0, 1], Sp[:, 0, 2] = -pe[:, 2], pe[:, 1]
    Sp[:, 1, 0], Sp[:, 1, 2] = pe[:, 2], -pe[:, 0]
    Sp[:, 2, 0], Sp[:, 2, 1] = -pe[:, 1], pe[:, 0]
    He = np.empty((n_e, 3, 6))
    He[:, :, :3] = -np.einsum("nab,bc,ncd->nad", Gu, x.rot, Sp)
    He[:, :, 3:] = Gu
    return Hp, He


def stacked_jacobian(x, ext, p_Lk, m):
    """Dense stacked H (rows ordered plane/edge as in ``m``) and residual vector z."""
    p_I = ext.to_imu(p_Lk[m.index])
    Hp, He = _jacobian_blocks(x, p_I, m)
    rows, zs = [], []
    ip = ie = 0
    for k in m.kind:
        if k == int(Kind.PLANE):
            h = np.zeros((1, DIM))
            h[0, :6] = Hp[ip]
            rows.append(h)
            ip += 1
        else:
            h = np.zeros((3, DIM))
            h[:, :6] = He[ie]
            rows.append(h)
            ie += 1
    for row, k in enumerate(m.kind):
        zs.append(m.z[row, :1] if k == int(Kind.PLANE) else m.z[row])
    return np.vstack(rows), np.concatenate(zs)


def _residuals_fixed(x, ext, p_Lk, m):
    """Residuals of the matched points under pose ``x`` with correspondences held fixed."""
    p_G = transform_to_global(x, ext, p_Lk[m.index])
    d = p_G - m.q
    planes = m.planes()
    z = np.cross(m.u, d)
    z[planes] = 0.0
    z[planes, 0] = np.einsum("nj,nj->n", m.u[planes], d[planes])
    return z


def jacobian_fd_error(x, ext, p_Lk, m, step=1e-6):
    """Largest deviation between analytic H rows and central differences of the residuals."""
    p_I = ext.to_imu(p_Lk[m.index])
    Hp, He = _jacobian_blocks(x, p_I, m)
    planes = m.planes()
    Hfull = np.zeros((len(m), 3, DIM))
    Hfull[planes, 0, :6] = Hp
    Hfull[~planes, :, :6] = He
    err = 0.0
    for c in range(DIM):
        e = np.zeros(DIM)
        e[c] = step
        fd = (_residuals_fixed(x.boxplus(e), ext, p_Lk, m)
              - _residuals_fixed(x.boxplus(-e), ext, p_Lk, m)) / (2.0 * step)
        err = max(err, float(np.abs(fd - Hfull[:, :, c]).max(initial=0.0)))
    return err


def compute_J(x_kappa, x_k):
    """Jacobian of (x_kappa [+] dx) [-] x_k with respect to dx at zero."""
    phi = manifold.log_map(x_k.rot.T @ x_kappa.rot)
    J = np.eye(DIM)
    J[ROT, ROT] = manifold.a_matrix_inv(phi).T
    return J


def _inverse_J(x_kappa, x_k):
    phi = manifold.log_map(x_k.rot.T @ x_kappa.rot)
    Jinv = np.eye(DIM)
    Jinv[ROT, ROT] = manifold.a_matrix(phi).T
    return Jinv


# --- gains ------------------------------------------------------------------

def _block_runs(R, m):
    """Normalise R to a list of stacked runs, each of shape (count, k, k), in row order.

    Accepted forms: 1-D variances, one (count, k, k) stack, or a sequence whose
    items are 2-D blocks, stacks, or 1-D variance vectors. An m x m matrix is
    taken as a single block.
    """
    if isinstance(R, np.ndarray) and R.ndim == 2 and R.shape == (m, m):
        pieces = [R[None]]
    elif isinstance(R, np.ndarray) and R.ndim in (1, 3):
        pieces = [R]
    else:
        pieces = list(R)
    runs = []
    for piece in pieces:
        piece = np.asarray(piece, dtype=float)
        if piece.ndim == 0:
            piece = piece.reshape(1, 1, 1)
        elif piece.ndim == 1:
            piece = piece[:, None, None]
        elif piece.ndim == 2:
            piece = piece[None]
        if runs and runs[-1][-1].shape[1:] == piece.shape[1:]:
            runs[-1].append(piece)
        else:
            runs.append([piece])
    runs = [r[0] if len(r) == 1 else np.concatenate(r) for r in runs]
    if sum(r.shape[0] * r.shape[1] for r in runs) != m:
        raise ValueError("R blocks do not match the number of measurement rows")
    return runs


def _dense_R(R, m):
    if isinstance(R, np.ndarray) and R.ndim == 1:
        return np.diag(R)
    out = np.zeros((m, m))
    r = 0
    for run in _block_runs(R, m):
        n, k = run.shape[:2]
        idx = r + np.arange(n * k).reshape(n, k)
        out[idx[:, :, None], idx[:, None, :]] = run
        r += n * k
    return out


def _chol_cond(c):
    d = np.abs(np.diag(c))
    if d.min() <= 0.0:
        return np.inf
    return (d.max() / d.min()) ** 2


def gain_standard(P, H, R):
    """K = P H^T (H P H^T + R)^-1 via a Cholesky solve of the m x m innovation matrix."""
    P = np.asarray(P, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    m = H.shape[0]
    HP = H @ P
    S = HP @ H.T + _dense_R(R, m)
    try:
        c, low = linalg.cho_factor(S, lower=False, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    if _chol_cond(c) > COND_LIMIT:
        raise SingularInnovation("innovation matrix is numerically singular")
    return linalg.cho_solve((c, low), HP, check_finite=False).T


def _prior_information(P):
    """Cholesky-based inverse of the prior covariance; raises SingularPrior."""
    P = 0.5 * (P + P.T)
    try:
        c = linalg.cho_factor(P, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularPrior(f"prior covariance is not positive definite ({exc})") from exc
    cond = _chol_cond(c[0])
    if cond > COND_LIMIT:
        raise SingularPrior(f"prior covariance condition estimate {cond:.3g}")
    Pinv = linalg.cho_solve(c, np.eye(len(P)), check_finite=False)
    return 0.5 * (Pinv + Pinv.T)


def weighted_rows(H, R):
    """H^T R^-1 computed block by block (never forming an m x m matrix)."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    m = H.shape[0]
    if isinstance(R, np.ndarray) and R.ndim == 1:
        return (H / R[:, None]).T
    out = np.empty((m, H.shape[1]))
    r = 0
    for run in _block_runs(R, m):
        n, k = run.shape[:2]
        Hk = H[r:r + n * k].reshape(n, k, -1)
        if k == 1:
            out[r:r + n] = Hk[:, 0] / run[:, 0]
        elif k == 3:
            out[r:r + n * k] = kernels.solve_block3(np.ascontiguousarray(run), Hk).reshape(n * k, -1)
        else:
            out[r:r + n * k] = (np.linalg.inv(run) @ Hk).reshape(n * k, -1)
        r += n * k
    return out.T


def gain_fast(P, H, R):
    """K = (H^T R^-1 H + P^-1)^-1 H^T R^-1.

    Cost is O(m n^2 + n^3) for n states and m measurement rows.
    """
    P = np.asarray(P, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    HtRinv = weighted_rows(H, R)
    info = _prior_information(P) + HtRinv @ H
    c = linalg.cho_factor(info, check_finite=False)
    # n x n inverse then one product: cheaper than m right-hand sides
    return linalg.cho_solve(c, np.eye(len(info)), check_finite=False) @ HtRinv


# --- iterated update --------------------------------------------------------

def _unpack_points(points, kinds):
    if kinds is None and len(points) and hasattr(points[0], "kind"):
        kinds = np.array([int(p.kind) for p in points], dtype=np.int8)
        points = np.array([p.xyz for p in points], dtype=float)
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    if kinds is None:
        kinds = np.zeros(len(points), dtype=np.int8)
    return points, np.asarray(kinds, dtype=np.int8)


def iterated_update(x_k, P_k, points_Lk, fmap, ext, cfg=None, noise=None, kinds=None):
    """Fuse one motion-compensated scan with the propagated prior.

    Correspondences are searched again on every iteration. The loop stops
    once the increment between successive iterates drops below
    ``cfg.epsilon`` or after ``cfg.max_iterations`` iterations.

    Raises:
        NoCorrespondences: if no point passes the gate on some iteration.
        SingularPrior: if the projected prior cannot be inverted.
    """
    cfg = cfg or IekfConfig()
    noise = noise or MeasurementNoise()
    points_Lk, kinds = _unpack_points(points_Lk, kinds)
    mcfg = cfg.match_config()
    P_k = 0.5 * (np.asarray(P_k, dtype=float) + np.asarray(P_k, dtype=float).T)
    x = x_k
    jac_errors = []
    converged = False
    step = np.inf
    for it in range(1, cfg.max_iterations + 1):
        Jinv = _inverse_J(x, x_k)
        P = Jinv @ P_k @ Jinv.T
        p_G = transform_to_global(x, ext, points_Lk)
        m = match_points(fmap, p_G, kinds, mcfg, viewpoint=x.pos + x.rot @ ext.pos)
        if len(m) == 0:
            raise NoCorrespondences(f"no correspondence passed the gate on iteration {it}")
        if cfg.debug:
            jac_errors.append(jacobian_fd_error(x, ext, points_Lk, m))

        p_I = ext.to_imu(points_Lk[m.index])
        Hp, He = _jacobian_blocks(x, p_I, m)
        planes = m.planes()
        A6, b6 = kernels.accumulate_scalar(
            np.ascontiguousarray(Hp), np.ascontiguousarray(m.z[planes, 0]),
            np.full(len(Hp), 1.0 / noise.plane_var()))
        if len(He):
            Ae, be = kernels.accumulate_block3(
                np.ascontiguousarray(He), np.ascontiguousarray(m.z[~planes]),
                np.ascontiguousarray(noise.edge_info_batch(m.u[~planes])))
            A6 = A6 + Ae
            b6 = b6 + be

        Pinv = _prior_information(P)
        info = Pinv.copy()
        info[:6, :6] += A6
        c = linalg.cho_factor(info, check_finite=False)
        HtRz = np.zeros(DIM)
        HtRz[:6] = b6
        # (I - K H) == info^-1 P^-1
        rhs = -HtRz - Pinv @ (Jinv @ x.boxminus(x_k))
        dx = linalg.cho_solve(c, rhs, check_finite=False)
        x_next = x.boxplus(dx)
        step = float(np.linalg.norm(x_next.boxminus(x)))
        x = x_next
        if step < cfg.epsilon:
            converged = True
            break

    P_post = linalg.cho_solve(c, np.eye(DIM), check_finite=False)
    P_post = 0.5 * (P_post + P_post.T)
    return UpdateResult(x, P_post, it, len(m), converged, P, step, jac_errors)


# --- static initialisation -----------------------------------------------------

INIT_STD = {
    "rot": 1e-3,      # rad
    "pos": 1e-3,      # m
    "vel": 1e-2,      # m/s
    "bias_gyro": 1e-3,  # rad/s
    "bias_acc": 5e-2,   # m/s^2
    "gravity": 5e-2,    # m/s^2
}


def initial_covariance(std=None):
    std = {**INIT_STD, **(std or {})}
    diag = np.concatenate([np.full(3, std[k]) ** 2 for k in
                           ("rot", "pos", "vel", "bias_gyro", "bias_acc", "gravity")])
    return np.diag(diag)


def static_initialize(imu, duration=2.0, gyro_std_max=0.05, acc_std_max=0.5,
                      min_rate=50.0, walk_noise=None):
    """Estimate gyro bias, gravity and IMU noise from a static stretch of data.

    The global frame is the first IMU frame, so attitude, position and
    velocity start at identity/zero and gravity is the negated mean specific
    force. Returns ``(state, covariance, process_noise)``; the process noise
    uses the sample variances for the white terms and ``walk_noise``
    (per-sample std of gyro and accel bias walks) for the rest.
    """
    if len(imu) == 0:
        raise TooShort("no IMU samples")
    t0 = imu[0].stamp
    window = [s for s in imu if s.stamp <= t0 + duration]
    if len(window) < duration * min_rate or window[-1].stamp - t0 < duration * 0.95:
        raise TooShort(f"need {duration} s of IMU data at >= {min_rate} Hz, got {len(window)} samples")
    gyro = np.array([s.gyro for s in window])
    acc = np.array([s.acc for s in window])
    g_std = gyro.std(axis=0)
    a_std = acc.std(axis=0)
    if g_std.max() > gyro_std_max or a_std.max() > acc_std_max:
        raise NotStatic(f"gyro std {g_std.max():.3g} rad/s, accel std {a_std.max():.3g} m/s^2")
    x0 = NavState(bias_gyro=gyro.mean(axis=0), gravity=-acc.mean(axis=0))
    walk = walk_noise if walk_noise is not None else (1e-5 * np.sqrt(200.0),) * 2
    q = np.concatenate([g_std ** 2, a_std ** 2, np.full(3, walk[0] ** 2), np.full(3, walk[1] ** 2)])
    return x0, initial_covariance(), ProcessNoise(np.diag(q))


__all__ = [
    "MeasurementNoise", "IekfConfig", "UpdateResult", "Correspondence",
    "measurement_jacobian", "compute_J", "gain_standard", "gain_fast", "iterated_update",
    "static_initialize", "initial_covariance", "stacked_jacobian", "jacobian_fd_error",
]
