"""End-to-end odometry: static initialisation, then propagate, deskew, update, map per scan."""
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import manifold
from .classify import classify_array
from .errors import NoCorrespondences, NotStatic, TooFewPoints, TooShort
from .feature_map import FeatureMap, MatchConfig, append_scan
from .iekf import IekfConfig, MeasurementNoise, iterated_update, static_initialize
from .io import (format_stamp, parse_dataset, read_trajectory, trajectory_line,
                 write_key_values)
from .propagation import Extrinsic, ScanBundle, forward_propagate, undistort_scan
from .state import ImuSample, ProcessNoise

log = logging.getLogger(__name__)

NS = 1_000_000_000
REALTIME_TARGET_MS = 25.0


@dataclass
class RunConfig:
    """Every knob of a run; each field is also a ``run`` CLI flag and config-file key."""

    imu: str = None
    points: str = None
    out: str = "lio_out"
    gt: str = None
    init_duration: float = 2.0
    scan_interval: float = 0.02
    epsilon: float = 1e-3
    max_iterations: int = 10
    residual_gate: float = 0.5
    knn_k: int = 5
    plane_ratio: float = 0.01
    plane_max_dist: float = 0.1
    edge_ratio: float = 3.0
    sigma_point: float = 0.02
    imu_rate: float = 200.0
    gyro_noise: float = 1e-3
    acc_noise: float = 1e-2
    gyro_walk: float = 1e-5
    acc_walk: float = 1e-5
    extrinsic_rotvec: tuple = (0.0, 0.0, 0.0)
    extrinsic_pos: tuple = (0.0, 0.0, 0.0)
    min_effective: int = 10
    classify_neighborhood: int = 5
    dump_map: bool = True

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def iekf_config(self):
        return IekfConfig(self.epsilon, self.max_iterations, self.residual_gate,
                          MatchConfig(self.knn_k, self.residual_gate, self.plane_ratio,
                                      self.plane_max_dist, self.edge_ratio))

    def extrinsic(self):
        return Extrinsic(manifold.exp_map(self.extrinsic_rotvec), self.extrinsic_pos)

    def process_noise(self):
        return ProcessNoise.from_densities(self.gyro_noise, self.acc_noise, self.gyro_walk,
                                           self.acc_walk, self.imu_rate)

    def validate(self):
        if not 0.0 < self.scan_interval <= 1.0:
            raise ValueError("scan_interval must lie in (0, 1] s")
        if self.init_duration <= 0.0:
            raise ValueError("init_duration must be positive")
        if self.knn_k < 5:
            raise ValueError("knn_k must be at least 5")


@dataclass
class TrajectoryRecord:
    stamp_ns: int
    rot: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    bias_gyro: np.ndarray
    bias_acc: np.ndarray
    gravity: np.ndarray
    iterations_used: int
    effective_points: int
    degenerate: bool
    time_us: float

    @property
    def stamp(self):
        return self.stamp_ns * 1e-9


@dataclass
class RunResult:
    records: list = field(default_factory=list)
    fmap: FeatureMap = None
    init_state: object = None
    init_covariance: np.ndarray = None
    noise_estimate: ProcessNoise = None
    metrics: dict = field(default_factory=dict)
    # (prior, posterior) covariance per scan, filled when keep_covariance is set
    covariances: list = field(default_factory=list)

    @property
    def all_degenerate(self):
        return bool(self.records) and all(r.degenerate for r in self.records)


class LioOdometry:
    """Causal scan-by-scan estimator fed with IMU and point arrays (nanosecond stamps)."""

    def __init__(self, cfg=None, keep_covariance=False):
        self.cfg = cfg or RunConfig()
        self.keep_covariance = keep_covariance
        self.cfg.validate()
        self.iekf_cfg = self.cfg.iekf_config()
        self.noise = MeasurementNoise(self.cfg.sigma_point)
        self.Q = self.cfg.process_noise()
        self.ext = self.cfg.extrinsic()
        self.fmap = FeatureMap()

    def _kinds_for(self, xyz, kinds):
        if kinds is not None:
            return kinds, np.ones(len(xyz), bool)
        try:
            k = classify_array(xyz, self.cfg.classify_neighborhood)
        except TooFewPoints:
            k = np.full(len(xyz), -1, np.int8)
        keep = k >= 0
        return k, keep

    def run(self, imu_stamps_ns, gyro, acc, pt_stamps_ns, xyz, kinds=None):
        """Process whole streams; returns a :class:`RunResult`."""
        imu_stamps_ns = np.asarray(imu_stamps_ns, dtype=np.int64)
        pt_stamps_ns = np.asarray(pt_stamps_ns, dtype=np.int64)
        imu_t = imu_stamps_ns * 1e-9
        result = RunResult(fmap=self.fmap)
        if len(imu_stamps_ns) == 0:
            return result
        samples = [ImuSample(float(t), g, a) for t, g, a in zip(imu_t, gyro, acc)]

        t0_ns = int(imu_stamps_ns[0])
        init_end_ns = t0_ns + int(round(self.cfg.init_duration * NS))
        if imu_stamps_ns[-1] < init_end_ns - NS // 20:
            raise TooShort("dataset shorter than the static initialisation window")
        x, P, q_est = static_initialize(samples, self.cfg.init_duration)
        result.init_state, result.init_covariance, result.noise_estimate = x, P, q_est
        # The platform is static over the window, so the initial estimate is
        # anchored at its end; the map built below is defined by that pose.
        # Points gathered while static seed the map in the first IMU frame.
        n_init_pts = int(np.searchsorted(pt_stamps_ns, init_end_ns, side="right"))
        k0, keep0 = self._kinds_for(xyz[:n_init_pts], None if kinds is None else kinds[:n_init_pts])
        append_scan(self.fmap, x, self.ext, xyz[:n_init_pts][keep0], k0[keep0])

        step = int(round(self.cfg.scan_interval * NS))
        last_ns = max(int(imu_stamps_ns[-1]), int(pt_stamps_ns[-1]) if len(pt_stamps_ns) else 0)
        t_prev = init_end_ns
        p_lo = n_init_pts
        while t_prev + step <= last_ns:
            t_k = t_prev + step
            p_hi = int(np.searchsorted(pt_stamps_ns, t_k, side="right"))
            i_lo = max(int(np.searchsorted(imu_stamps_ns, t_prev, side="right")) - 1, 0)
            i_hi = int(np.searchsorted(imu_stamps_ns, t_k, side="right"))
            rec, x, P, P_hat = self._process_scan(
                x, P, t_prev, t_k, samples[i_lo:i_hi], imu_t[i_lo:i_hi], gyro[i_lo:i_hi],
                acc[i_lo:i_hi], pt_stamps_ns[p_lo:p_hi], xyz[p_lo:p_hi],
                None if kinds is None else kinds[p_lo:p_hi])
            result.records.append(rec)
            if self.keep_covariance:
                result.covariances.append((P_hat, P))
            t_prev, p_lo = t_k, p_hi
        return result

    def _process_scan(self, x, P, t_prev_ns, t_k_ns, imu, imu_t, gyro, acc, st_ns, xyz, kinds):
        tic = time.perf_counter()
        t_prev, t_k = t_prev_ns * 1e-9, t_k_ns * 1e-9
        x_hat, P_hat = forward_propagate(x, P, imu, t_k, self.Q, t_start=t_prev)
        kinds, keep = self._kinds_for(xyz, kinds)
        st_ns, xyz, kinds = st_ns[keep], xyz[keep], kinds[keep]
        iterations, effective, degenerate = 0, 0, True
        x_new, P_new = x_hat, P_hat
        if len(xyz):
            scan = ScanBundle(st_ns * 1e-9, xyz, kinds, imu_t, gyro, acc, t_prev, t_k)
            p_Lk = undistort_scan(scan, x_hat, self.ext)
            try:
                res = iterated_update(x_hat, P_hat, p_Lk, self.fmap, self.ext,
                                      self.iekf_cfg, self.noise, kinds=kinds)
                iterations, effective = res.iterations_used, res.effective_points
                if effective >= self.cfg.min_effective:
                    x_new, P_new, degenerate = res.x, res.P, False
            except NoCorrespondences:
                pass
            if degenerate:
                log.info("scan at %s degenerate (%d effective points); prior carried forward",
                         format_stamp(t_k_ns), effective)
            append_scan(self.fmap, x_new, self.ext, p_Lk, kinds)
        elapsed = (time.perf_counter() - tic) * 1e6
        rec = TrajectoryRecord(t_k_ns, x_new.rot, x_new.pos, x_new.vel, x_new.bias_gyro,
                               x_new.bias_acc, x_new.gravity, iterations, effective,
                               degenerate, elapsed)
        return rec, x_new, P_new, P_hat


def summarize(records, gt=None):
    """Scan timing, effective points and (with ground truth) drift figures."""
    out = {"scans": len(records)}
    if not records:
        return out
    times = np.array([r.time_us for r in records]) / 1000.0
    eff = np.array([r.effective_points for r in records])
    out.update(
        mean_scan_ms=float(times.mean()),
        max_scan_ms=float(times.max()),
        mean_effective_points=float(eff.mean()),
        mean_iterations=float(np.mean([r.iterations_used for r in records])),
        degenerate_scans=int(sum(r.degenerate for r in records)),
    )
    est = np.array([r.pos for r in records])
    out["return_to_start_m"] = float(np.linalg.norm(est[-1]))
    out["est_path_length_m"] = float(np.linalg.norm(np.diff(est, axis=0), axis=1).sum())
    if gt is not None:
        gt_t, gt_p = gt
        stamps = np.array([r.stamp for r in records])
        idx = np.clip(np.searchsorted(gt_t, stamps - 1e-7), 0, len(gt_t) - 1)
        matched = np.abs(gt_t[idx] - stamps) < 1e-6
        if matched.any():
            err = np.linalg.norm(est[matched] - gt_p[idx[matched]], axis=1)
            length = float(np.linalg.norm(np.diff(gt_p, axis=0), axis=1).sum())
            out["gt_path_length_m"] = length
            out["ate_rmse_m"] = float(np.sqrt(np.mean(err ** 2)))
            out["final_error_m"] = float(err[-1])
            if length > 0:
                out["drift_percent"] = 100.0 * float(err[-1]) / length
    return out


def realtime_warning(metrics):
    """Message when the mean scan time misses the real-time target, else None."""
    mean_ms = metrics.get("mean_scan_ms")
    if mean_ms is not None and mean_ms > REALTIME_TARGET_MS:
        return (f"mean scan time {mean_ms:.1f} ms exceeds the {REALTIME_TARGET_MS:.0f} ms "
                f"real-time target (mean {metrics.get('mean_effective_points', 0):.0f} effective points)")
    return None


def write_outputs(result, out_dir, dump_map=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.txt", "w") as fh:
        for r in result.records:
            fh.write(trajectory_line(r.stamp_ns, r.rot, r.pos, r.vel))
    with open(out / "scans.txt", "w") as fh:
        fh.write("# stamp iterations effective_points degenerate time_us "
                 "bgx bgy bgz bax bay baz gx gy gz\n")
        for r in result.records:
            vals = " ".join(repr(float(v)) for v in (*r.bias_gyro, *r.bias_acc, *r.gravity))
            fh.write(f"{format_stamp(r.stamp_ns)} {r.iterations_used} {r.effective_points} "
                     f"{int(r.degenerate)} {r.time_us:.1f} {vals}\n")
    if dump_map and result.fmap is not None:
        result.fmap.dump(out / "map.txt")
    write_key_values(out / "metrics.txt", result.metrics)


def run_odometry(cfg):
    """Run on files named in ``cfg``; writes trajectory, scan log, map and metrics.

    Returns the :class:`RunResult`. Errors propagate to the caller (the CLI
    maps them to exit codes).
    """
    imu, pts = parse_dataset(cfg.imu, cfg.points)
    odo = LioOdometry(cfg)
    result = odo.run(imu.stamps_ns, imu.gyro, imu.acc, pts.stamps_ns, pts.xyz, pts.kinds)
    gt = None
    if cfg.gt:
        t, p, _, _ = read_trajectory(cfg.gt)
        gt = (t, p)
    result.metrics = summarize(result.records, gt)
    warn = realtime_warning(result.metrics)
    if warn:
        log.warning(warn)
        result.metrics["realtime_warning"] = warn
    write_outputs(result, cfg.out, cfg.dump_map)
    return result


__all__ = ["RunConfig", "TrajectoryRecord", "LioOdometry", "run_odometry", "summarize",
           "NotStatic"]
