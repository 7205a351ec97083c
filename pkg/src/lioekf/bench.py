"""Timing of the two Kalman gain forms and of the compiled vs. pure-Python kernels."""
import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .iekf import gain_fast, gain_standard
from .state import DIM

TABLE_M = (307, 717, 998, 1243, 1453, 1802)
EQUIVALENCE_TOL = 1e-9


class EquivalenceError(AssertionError):
    """The two gain formulas disagree; timings would be meaningless."""


@dataclass
class GainRow:
    m: int
    time_standard: float   # seconds, best of trials
    time_fast: float
    rel_diff: float

    @property
    def speedup(self):
        return self.time_standard / self.time_fast if self.time_fast > 0 else float("inf")


def random_problem(rng, m, n=DIM, block=3):
    """Random PSD prior, m x n Jacobian and block-diagonal R as stacked SPD blocks."""
    A = rng.standard_normal((n, n))
    P = A @ A.T / n + 1e-2 * np.eye(n)
    H = rng.standard_normal((m, n))
    def spd(count, k):
        B = rng.standard_normal((count, k, k))
        return B @ B.transpose(0, 2, 1) * 1e-2 + 1e-3 * np.eye(k)

    full, rest = divmod(m, block)
    R = [spd(full, block)] if full else []
    if rest:
        R.append(spd(1, rest)[0])
    return P, H, R


def relative_difference(K1, K2):
    return float(np.linalg.norm(K1 - K2) / np.linalg.norm(K1))


def _best_time(fn, trials):
    best = np.inf
    for _ in range(trials):
        tic = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - tic)
    return best


def benchmark_gain(m_list=TABLE_M, trials=5, seed=0):
    """One :class:`GainRow` per m, after checking both gains agree to 1e-9 relative.

    Raises :class:`EquivalenceError` before any timing if they do not.
    """
    m_list = list(m_list)
    if not m_list:
        raise ValueError("m_list must not be empty")
    rng = np.random.default_rng(seed)
    problems = [(m, *random_problem(rng, m)) for m in m_list]
    diffs = []
    for m, P, H, R in problems:
        d = relative_difference(gain_standard(P, H, R), gain_fast(P, H, R))
        if not d <= EQUIVALENCE_TOL:
            raise EquivalenceError(f"m={m}: gains differ by {d:.3e} (relative Frobenius)")
        diffs.append(d)
    rows = []
    for (m, P, H, R), d in zip(problems, diffs):
        t_std = _best_time(lambda: gain_standard(P, H, R), trials)
        t_fast = _best_time(lambda: gain_fast(P, H, R), trials)
        rows.append(GainRow(m, t_std, t_fast, d))
    return rows


def format_gain_table(rows):
    lines = [f"{'m':>6}  {'standard (ms)':>14}  {'fast (ms)':>10}  {'speedup':>8}  {'rel diff':>9}"]
    for r in rows:
        lines.append(f"{r.m:>6}  {r.time_standard * 1e3:>14.3f}  {r.time_fast * 1e3:>10.3f}  "
                     f"{r.speedup:>7.1f}x  {r.rel_diff:>9.1e}")
    return "\n".join(lines)


def benchmark_kernels(n_points=1500, n_stamps=300, trials=20, seed=0):
    """Best-of times (seconds) per kernel and backend, as ``{kernel: {backend: t}}``."""
    rng = np.random.default_rng(seed)
    H = rng.standard_normal((n_points, 6))
    z = rng.standard_normal(n_points)
    w = rng.uniform(0.5, 2.0, n_points)
    Hb = rng.standard_normal((n_points // 3, 3, 6))
    zb = rng.standard_normal((n_points // 3, 3))
    Wb = np.tile(np.eye(3), (n_points // 3, 1, 1))
    imu_t = np.linspace(0.0, 0.1, 21)
    gyro = rng.standard_normal((21, 3)) * 0.5
    acc = rng.standard_normal((21, 3)) + [0.0, 0.0, 9.81]
    stamps = np.sort(rng.uniform(0.0, 0.1, n_stamps))
    zeros = np.zeros(3)
    grav = np.array([0.0, 0.0, -9.81])

    out = {}
    for name, mod in kernels.available_backends().items():
        cases = {
            "accumulate_scalar": lambda: mod.accumulate_scalar(H, z, w),
            "accumulate_block3": lambda: mod.accumulate_block3(Hb, zb, Wb),
            "back_propagate": lambda: mod.back_propagate(stamps, imu_t, gyro, acc, zeros, zeros,
                                                         zeros, grav),
        }
        for kernel, fn in cases.items():
            out.setdefault(kernel, {})[name] = _best_time(fn, trials)
    return out


def format_kernel_table(result):
    backends = sorted({b for v in result.values() for b in v})
    lines = [f"{'kernel':<20}" + "".join(f"{b + ' (us)':>16}" for b in backends)]
    for kernel, times in result.items():
        lines.append(f"{kernel:<20}" + "".join(
            f"{times[b] * 1e6:>16.1f}" if b in times else f"{'-':>16}" for b in backends))
    return "\n".join(lines)
