"""Pure-Python fallback for the compiled kernels (same signatures, same results)."""
import numpy as np

from .manifold import exp_map

BACKEND = "python"


def back_propagate(stamps, imu_stamps, gyro, acc, bias_gyro, bias_acc, vel_k, grav_k):
    """Backward recursion over ascending unique ``stamps`` ending at the scan end.

    Returns ``(rots, pos)`` for every stamp, or ``None`` when a stamp has no
    IMU sample at or before it.
    """
    n = len(stamps)
    rots = np.zeros((n, 3, 3))
    pos = np.zeros((n, 3))
    if n == 0:
        return rots, pos
    R = np.eye(3)
    p = np.zeros(3)
    v = np.array(vel_k, dtype=float)
    rots[-1] = R
    i = len(imu_stamps) - 1
    for j in range(n - 1, 0, -1):
        while i >= 0 and imu_stamps[i] > stamps[j - 1]:
            i -= 1
        if i < 0:
            return None
        dt = stamps[j] - stamps[j - 1]
        f = R @ (acc[i] - bias_acc)
        p = p - v * dt
        v = v - f * dt - grav_k * dt
        R = R @ exp_map((bias_gyro - gyro[i]) * dt)
        rots[j - 1] = R
        pos[j - 1] = p
    return rots, pos


def accumulate_scalar(H, z, w):
    """Sum of w_r h_r^T h_r and w_r h_r^T z_r over rows."""
    Hw = H * w[:, None]
    return Hw.T @ H, Hw.T @ z


def accumulate_block3(H, z, W):
    """Sum of H_r^T W_r H_r and H_r^T W_r z_r over 3-row blocks."""
    WH = np.einsum("rab,rbc->rac", W, H)
    return np.einsum("rac,rad->cd", H, WH), np.einsum("rac,ra->c", WH, z)


def solve_block3(R, H):
    """X_r = R_r^-1 H_r for SPD 3x3 blocks."""
    np.linalg.cholesky(R)  # raises LinAlgError for a non-SPD block, like the compiled path
    return np.linalg.solve(R, H)
