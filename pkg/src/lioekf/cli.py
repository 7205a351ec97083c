"""Command-line entry point: ``lioekf run | simulate | bench-gain | bench-kernels | classify``.

Exit codes: 0 success, 1 other failure, 2 parse error, 3 every scan
degenerate, 4 numeric failure.
"""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import NUMERIC_ERRORS, LioError, NonMonotonicStamps, ParseError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARSE = 2
EXIT_DEGENERATE = 3
EXIT_NUMERIC = 4

log = logging.getLogger("lioekf")


def _float_list(text):
    return tuple(float(v) for v in str(text).replace(",", " ").split())


def _int_list(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _run_arguments(parser):
    from .odometry import RunConfig

    defaults = RunConfig()
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        if isinstance(default, bool):
            kind = _bool
        elif isinstance(default, tuple):
            kind = _float_list
        elif isinstance(default, int):
            kind = int
        elif isinstance(default, float):
            kind = float
        else:
            kind = str
        parser.add_argument(flag, dest=f.name, type=kind, default=None,
                            help=f"default: {default}")


def build_parser():
    p = argparse.ArgumentParser(prog="lioekf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run odometry on an IMU file and a points file")
    run.add_argument("--config", help="key = value file; command-line flags override it")
    _run_arguments(run)

    sim = sub.add_parser("simulate", help="write a synthetic dataset with ground truth")
    sim.add_argument("--out", required=True)
    sim.add_argument("--trajectory", default="Circle",
                     choices=["Static", "Circle", "Figure8", "SplineWaypoints"])
    sim.add_argument("--world", default="room", choices=["room", "single_plane", "corridor"])
    sim.add_argument("--duration", type=float, default=30.0)
    sim.add_argument("--radius", type=float, default=1.8)
    sim.add_argument("--period", type=float, default=8.0)
    sim.add_argument("--static-lead", type=float, default=2.0)
    sim.add_argument("--static-tail", type=float, default=2.0)
    sim.add_argument("--yaw-mode", default="constant", choices=["constant", "tangent"])
    sim.add_argument("--open", dest="closed", action="store_false",
                     help="do not adjust the rate to close the loop")
    sim.add_argument("--noise", default="realistic", choices=["realistic", "none"])
    sim.add_argument("--imu-rate", type=float, default=200.0)
    sim.add_argument("--imu-mode", default="discrete", choices=["discrete", "interval", "instant"],
                     help="how noiseless IMU samples are derived from the trajectory")
    sim.add_argument("--scan-interval", type=float, default=0.02)
    sim.add_argument("--points-per-scan", type=int, default=200)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--no-kinds", action="store_true",
                     help="omit the kind column (run then classifies the points)")

    bg = sub.add_parser("bench-gain", help="time the standard and information-form gains")
    bg.add_argument("--m", type=_int_list, default=None,
                    help="measurement counts, e.g. '307,717,998'")
    bg.add_argument("--trials", type=int, default=5)
    bg.add_argument("--seed", type=int, default=0)

    bk = sub.add_parser("bench-kernels", help="time compiled vs pure-Python kernels")
    bk.add_argument("--points", type=int, default=1500)
    bk.add_argument("--trials", type=int, default=20)

    cl = sub.add_parser("classify", help="label raw scan-line points as P or E")
    cl.add_argument("--input", required=True, help="points file (stamp_ns,x,y,z)")
    cl.add_argument("--out", required=True)
    cl.add_argument("--neighborhood", type=int, default=5)
    cl.add_argument("--plane-threshold", type=float, default=0.01)
    cl.add_argument("--edge-threshold", type=float, default=0.05)
    return p


def _coerce(name, value):
    from .odometry import RunConfig

    default = getattr(RunConfig(), name)
    if isinstance(default, bool):
        return _bool(value)
    if isinstance(default, tuple):
        return _float_list(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def make_run_config(args):
    from .io import read_key_values
    from .odometry import RunConfig

    values = {}
    if args.config:
        for k, v in read_key_values(args.config).items():
            if k not in RunConfig.field_names():
                raise ValueError(f"{args.config}: unknown key {k!r}")
            values[k] = _coerce(k, v)
    for name in RunConfig.field_names():
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    for key in ("imu", "points"):
        path = getattr(cfg, key)
        if not path:
            raise ValueError(f"--{key} is required")
        if not Path(path).is_file():
            raise FileNotFoundError(f"{key} file not found: {path}")
    return cfg


def cmd_run(args):
    from .odometry import run_odometry

    cfg = make_run_config(args)
    result = run_odometry(cfg)
    m = result.metrics
    print(f"{m.get('scans', 0)} scans, mean {m.get('mean_scan_ms', 0):.2f} ms/scan, "
          f"{m.get('mean_effective_points', 0):.0f} effective points on average")
    if "drift_percent" in m:
        print(f"final error {m['final_error_m']:.4f} m ({m['drift_percent']:.3f}% of path)")
    if not result.records:
        log.error("no scans after the initialisation window")
        return EXIT_FAILURE
    if result.all_degenerate:
        log.error("every scan was degenerate")
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_simulate(args):
    from .io import trajectory_line, write_imu, write_points
    from .sim import SensorSpec, TrajectorySpec, WorldModel, simulate

    spec = TrajectorySpec(args.trajectory, radius=args.radius, period=args.period,
                          duration=args.duration, static_lead=args.static_lead,
                          static_tail=args.static_tail, yaw_mode=args.yaw_mode,
                          closed=args.closed)
    make = SensorSpec.realistic if args.noise == "realistic" else SensorSpec
    sensor = make(imu_rate=args.imu_rate, scan_interval=args.scan_interval,
                  points_per_scan=args.points_per_scan, rng_seed=args.seed,
                  imu_mode=args.imu_mode)
    ds = simulate(spec, sensor, WorldModel.preset(args.world))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_imu(out / "imu.csv", ds.imu.stamps_ns, ds.imu.gyro, ds.imu.acc)
    write_points(out / "points.csv", ds.point_stamps_ns, ds.points,
                 None if args.no_kinds else ds.kinds)
    R, p, v = ds.truth_at(ds.scan_ends_ns * 1e-9)
    with open(out / "groundtruth.txt", "w") as fh:
        for st, r, pp, vv in zip(ds.scan_ends_ns, R, p, v):
            fh.write(trajectory_line(st, r, pp, vv))
    print(f"wrote {len(ds.imu.stamps_ns)} IMU samples, {len(ds.points)} points and "
          f"{len(ds.scan_ends_ns)} ground-truth poses to {out}")
    return EXIT_OK


def cmd_bench_gain(args):
    from .bench import TABLE_M, benchmark_gain, format_gain_table

    rows = benchmark_gain(args.m or TABLE_M, args.trials, args.seed)
    print(format_gain_table(rows))
    return EXIT_OK


def cmd_bench_kernels(args):
    from .bench import benchmark_kernels, format_kernel_table
    from .kernels import BACKEND

    print(f"active backend: {BACKEND}")
    print(format_kernel_table(benchmark_kernels(args.points, trials=args.trials)))
    return EXIT_OK


def cmd_classify(args):
    from .classify import classify_array
    from .errors import TooFewPoints
    from .io import read_points, write_points

    pts = read_points(args.input)
    if len(pts) < 2 * args.neighborhood + 1:
        raise TooFewPoints(f"need at least {2 * args.neighborhood + 1} points, got {len(pts)}")
    kinds = classify_array(pts.xyz, args.neighborhood, args.plane_threshold, args.edge_threshold)
    keep = kinds >= 0
    write_points(args.out, pts.stamps_ns[keep], pts.xyz[keep], kinds[keep])
    n_edge = int(np.sum(kinds == 1))
    print(f"{int(keep.sum())} of {len(kinds)} points kept ({n_edge} edge)")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "bench-gain": cmd_bench_gain,
    "bench-kernels": cmd_bench_kernels,
    "classify": cmd_classify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ParseError, NonMonotonicStamps) as exc:
        log.error("parse error: %s", exc)
        return EXIT_PARSE
    except NUMERIC_ERRORS as exc:
        log.error("numeric failure: %s: %s", type(exc).__name__, exc)
        return EXIT_NUMERIC
    except (LioError, ValueError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
