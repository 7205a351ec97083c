# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Signatures mirror lioekf._kernels_py exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, sqrt

cnp.import_array()

BACKEND = "cython"


cdef inline void _exp3(double x, double y, double z, double* E) noexcept nogil:
    cdef double t2 = x * x + y * y + z * z
    cdef double t = sqrt(t2)
    cdef double s, c
    if t < 1e-7:
        s = 1.0
        c = 0.5
    else:
        s = sin(t) / t
        c = (1.0 - cos(t)) / t2
    # E = I + s K + c K^2 with K = skew(x, y, z)
    E[0] = 1.0 - c * (y * y + z * z)
    E[1] = -s * z + c * x * y
    E[2] = s * y + c * x * z
    E[3] = s * z + c * x * y
    E[4] = 1.0 - c * (x * x + z * z)
    E[5] = -s * x + c * y * z
    E[6] = -s * y + c * x * z
    E[7] = s * x + c * y * z
    E[8] = 1.0 - c * (x * x + y * y)


def back_propagate(const double[::1] stamps, const double[::1] imu_stamps,
                   const double[:, ::1] gyro, const double[:, ::1] acc,
                   const double[::1] bias_gyro, const double[::1] bias_acc,
                   const double[::1] vel_k, const double[::1] grav_k):
    cdef Py_ssize_t n = stamps.shape[0]
    cdef Py_ssize_t nimu = imu_stamps.shape[0]
    rots_arr = np.zeros((n, 3, 3))
    pos_arr = np.zeros((n, 3))
    if n == 0:
        return rots_arr, pos_arr
    cdef double[:, :, ::1] rots = rots_arr
    cdef double[:, ::1] pos = pos_arr
    cdef double R[9]
    cdef double E[9]
    cdef double T[9]
    cdef double p[3]
    cdef double v[3]
    cdef double f[3]
    cdef double dt, ax, ay, az
    cdef Py_ssize_t j, i, a, b, k
    cdef int missing = 0
    for a in range(9):
        R[a] = 0.0
    R[0] = 1.0
    R[4] = 1.0
    R[8] = 1.0
    for a in range(3):
        p[a] = 0.0
        v[a] = vel_k[a]
    rots[n - 1, 0, 0] = 1.0
    rots[n - 1, 1, 1] = 1.0
    rots[n - 1, 2, 2] = 1.0
    i = nimu - 1
    with nogil:
        for j in range(n - 1, 0, -1):
            while i >= 0 and imu_stamps[i] > stamps[j - 1]:
                i -= 1
            if i < 0:
                missing = 1
                break
            dt = stamps[j] - stamps[j - 1]
            ax = acc[i, 0] - bias_acc[0]
            ay = acc[i, 1] - bias_acc[1]
            az = acc[i, 2] - bias_acc[2]
            for a in range(3):
                f[a] = R[3 * a] * ax + R[3 * a + 1] * ay + R[3 * a + 2] * az
            for a in range(3):
                p[a] = p[a] - v[a] * dt
                v[a] = v[a] - f[a] * dt - grav_k[a] * dt
            _exp3((bias_gyro[0] - gyro[i, 0]) * dt,
                  (bias_gyro[1] - gyro[i, 1]) * dt,
                  (bias_gyro[2] - gyro[i, 2]) * dt, E)
            for a in range(3):
                for b in range(3):
                    T[3 * a + b] = (R[3 * a] * E[b] + R[3 * a + 1] * E[3 + b]
                                    + R[3 * a + 2] * E[6 + b])
            for a in range(9):
                R[a] = T[a]
            for a in range(3):
                pos[j - 1, a] = p[a]
                for b in range(3):
                    rots[j - 1, a, b] = R[3 * a + b]
    if missing:
        return None
    return rots_arr, pos_arr


def accumulate_scalar(const double[:, ::1] H, const double[::1] z, const double[::1] w):
    cdef Py_ssize_t m = H.shape[0]
    cdef Py_ssize_t c = H.shape[1]
    A_arr = np.zeros((c, c))
    b_arr = np.zeros(c)
    cdef double[:, ::1] A = A_arr
    cdef double[::1] bv = b_arr
    cdef Py_ssize_t r, a, b
    cdef double wa
    with nogil:
        for r in range(m):
            for a in range(c):
                wa = w[r] * H[r, a]
                bv[a] += wa * z[r]
                for b in range(a, c):
                    A[a, b] += wa * H[r, b]
        for a in range(c):
            for b in range(a):
                A[a, b] = A[b, a]
    return A_arr, b_arr


def accumulate_block3(const double[:, :, ::1] H, const double[:, ::1] z,
                      const double[:, :, ::1] W):
    cdef Py_ssize_t m = H.shape[0]
    cdef Py_ssize_t c = H.shape[2]
    A_arr = np.zeros((c, c))
    b_arr = np.zeros(c)
    cdef double[:, ::1] A = A_arr
    cdef double[::1] bv = b_arr
    cdef double WH[3][64]
    cdef Py_ssize_t r, a, b, k
    cdef double acc_
    if c > 64:
        raise ValueError("at most 64 columns supported")
    with nogil:
        for r in range(m):
            for a in range(3):
                for b in range(c):
                    WH[a][b] = W[r, a, 0] * H[r, 0, b] + W[r, a, 1] * H[r, 1, b] + W[r, a, 2] * H[r, 2, b]
            for a in range(c):
                acc_ = 0.0
                for k in range(3):
                    acc_ += WH[k][a] * z[r, k]
                bv[a] += acc_
                for b in range(a, c):
                    A[a, b] += H[r, 0, a] * WH[0][b] + H[r, 1, a] * WH[1][b] + H[r, 2, a] * WH[2][b]
        for a in range(c):
            for b in range(a):
                A[a, b] = A[b, a]
    return A_arr, b_arr


def solve_block3(const double[:, :, ::1] R, const double[:, :, ::1] H):
    """X_r = R_r^-1 H_r for SPD 3x3 blocks, via an in-register Cholesky."""
    cdef Py_ssize_t m = H.shape[0]
    cdef Py_ssize_t c = H.shape[2]
    X_arr = np.empty((m, 3, c))
    cdef double[:, :, ::1] X = X_arr
    cdef Py_ssize_t r, j
    cdef double l00, l10, l11, l20, l21, l22, y0, y1, y2
    cdef bint bad = False
    with nogil:
        for r in range(m):
            if R[r, 0, 0] <= 0.0:
                bad = True
                break
            l00 = sqrt(R[r, 0, 0])
            l10 = R[r, 1, 0] / l00
            l20 = R[r, 2, 0] / l00
            l11 = R[r, 1, 1] - l10 * l10
            if l11 <= 0.0:
                bad = True
                break
            l11 = sqrt(l11)
            l21 = (R[r, 2, 1] - l20 * l10) / l11
            l22 = R[r, 2, 2] - l20 * l20 - l21 * l21
            if l22 <= 0.0:
                bad = True
                break
            l22 = sqrt(l22)
            for j in range(c):
                y0 = H[r, 0, j] / l00
                y1 = (H[r, 1, j] - l10 * y0) / l11
                y2 = (H[r, 2, j] - l20 * y0 - l21 * y1) / l22
                y2 = y2 / l22
                y1 = (y1 - l21 * y2) / l11
                y0 = (y0 - l10 * y1 - l20 * y2) / l00
                X[r, 0, j] = y0
                X[r, 1, j] = y1
                X[r, 2, j] = y2
    if bad:
        raise np.linalg.LinAlgError("R block is not positive definite")
    return X_arr
