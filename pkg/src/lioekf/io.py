"""Dataset and output file formats.

IMU file:     ``stamp_ns, wx, wy, wz, ax, ay, az`` (SI units)
Points file:  ``stamp_ns, x, y, z[, kind]`` with kind P or E
Trajectory:   ``stamp x y z qw qx qy qz vx vy vz`` (stamp in seconds)
Map dump:     ``x y z kind``

CSV files may start with a header line and contain ``#`` comments.
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NonMonotonicStamps, ParseError
from .propagation import Kind, LidarPoint
from .state import ImuSample

IMU_HEADER = "stamp_ns,wx,wy,wz,ax,ay,az"
POINTS_HEADER = "stamp_ns,x,y,z,kind"


def _iter_records(path):
    """Yield ``(line_no, byte_offset, fields)`` for data lines of a CSV file."""
    with open(path, "rb") as fh:
        offset = 0
        for line_no, raw in enumerate(fh, start=1):
            start = offset
            offset += len(raw)
            try:
                text = raw.decode("ascii")
            except UnicodeDecodeError as exc:
                raise ParseError("non-ASCII content", path, line_no, start + exc.start) from None
            text = text.strip()
            if not text or text.startswith("#"):
                continue
            if line_no == 1 and not (text[0].isdigit() or text[0] == "-"):
                continue  # header
            yield line_no, start, [f.strip() for f in text.split(",")]


def _parse_stamp(field, path, line_no, offset):
    try:
        return int(field)
    except ValueError:
        raise ParseError(f"stamp {field!r} is not an integer nanosecond count",
                         path, line_no, offset) from None


def _parse_floats(fields, path, line_no, offset):
    try:
        vals = [float(f) for f in fields]
    except ValueError as exc:
        raise ParseError(f"bad number ({exc})", path, line_no, offset) from None
    if not all(np.isfinite(vals)):
        raise ParseError("non-finite value", path, line_no, offset)
    return vals


@dataclass
class ImuArrays:
    stamps_ns: np.ndarray
    gyro: np.ndarray
    acc: np.ndarray

    @property
    def stamps(self):
        return self.stamps_ns * 1e-9

    def samples(self):
        return [ImuSample(float(t), g, a) for t, g, a in zip(self.stamps, self.gyro, self.acc)]

    def __len__(self):
        return len(self.stamps_ns)


@dataclass
class PointArrays:
    stamps_ns: np.ndarray
    xyz: np.ndarray
    kinds: np.ndarray = None  # None when the file carries no kind column

    @property
    def stamps(self):
        return self.stamps_ns * 1e-9

    def points(self):
        kinds = self.kinds if self.kinds is not None else np.zeros(len(self.xyz), np.int8)
        return [LidarPoint(float(t), p, Kind(int(k))) for t, p, k in zip(self.stamps, self.xyz, kinds)]

    def __len__(self):
        return len(self.stamps_ns)


def read_imu(path):
    stamps, rows = [], []
    prev = None
    for line_no, offset, f in _iter_records(path):
        if len(f) != 7:
            raise ParseError(f"expected 7 fields, got {len(f)}", path, line_no, offset)
        st = _parse_stamp(f[0], path, line_no, offset)
        if prev is not None and st <= prev:
            raise NonMonotonicStamps(f"{path}: line {line_no}: IMU stamp {st} not after {prev}",
                                     line=line_no)
        prev = st
        stamps.append(st)
        rows.append(_parse_floats(f[1:], path, line_no, offset))
    data = np.array(rows, dtype=float).reshape(-1, 6)
    return ImuArrays(np.array(stamps, dtype=np.int64), data[:, :3].copy(), data[:, 3:].copy())


def read_points(path):
    stamps, rows, kinds = [], [], []
    prev = None
    has_kind = None
    for line_no, offset, f in _iter_records(path):
        if len(f) not in (4, 5):
            raise ParseError(f"expected 4 or 5 fields, got {len(f)}", path, line_no, offset)
        if has_kind is None:
            has_kind = len(f) == 5
        elif has_kind != (len(f) == 5):
            raise ParseError("kind column present on some lines only", path, line_no, offset)
        st = _parse_stamp(f[0], path, line_no, offset)
        if prev is not None and st < prev:
            raise NonMonotonicStamps(f"{path}: line {line_no}: point stamp {st} before {prev}",
                                     line=line_no)
        prev = st
        stamps.append(st)
        rows.append(_parse_floats(f[1:4], path, line_no, offset))
        if has_kind:
            try:
                kinds.append(int(Kind.from_letter(f[4])))
            except ValueError as exc:
                raise ParseError(str(exc), path, line_no, offset) from None
    xyz = np.array(rows, dtype=float).reshape(-1, 3)
    k = np.array(kinds, dtype=np.int8) if has_kind else None
    return PointArrays(np.array(stamps, dtype=np.int64), xyz, k)


def parse_dataset(imu_path, points_path):
    """Read and validate an IMU file and a points file."""
    return read_imu(imu_path), read_points(points_path)


def _fmt(values):
    # repr of a python float round-trips exactly
    return ",".join(repr(float(v)) for v in values)


def write_imu(path, stamps_ns, gyro, acc):
    with open(path, "w") as fh:
        fh.write(IMU_HEADER + "\n")
        for st, g, a in zip(stamps_ns, gyro, acc):
            fh.write(f"{int(st)},{_fmt(g)},{_fmt(a)}\n")


def write_points(path, stamps_ns, xyz, kinds=None):
    letters = np.array(["P", "E"])
    with open(path, "w") as fh:
        fh.write((POINTS_HEADER if kinds is not None else POINTS_HEADER[:-5]) + "\n")
        if kinds is None:
            for st, p in zip(stamps_ns, xyz):
                fh.write(f"{int(st)},{_fmt(p)}\n")
        else:
            for st, p, c in zip(stamps_ns, xyz, letters[np.asarray(kinds, dtype=int)]):
                fh.write(f"{int(st)},{_fmt(p)},{c}\n")


def format_stamp(stamp_ns):
    stamp_ns = int(stamp_ns)
    sign = "-" if stamp_ns < 0 else ""
    s, ns = divmod(abs(stamp_ns), 1_000_000_000)
    return f"{sign}{s}.{ns:09d}"


def rotation_to_quat(R):
    """Unit quaternion (w, x, y, z) with non-negative w."""
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    q = np.array([w, x, y, z])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_to_rotation(q):
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def trajectory_line(stamp_ns, R, p, v):
    q = rotation_to_quat(R)
    vals = " ".join(repr(float(a)) for a in (*p, *q, *v))
    return f"{format_stamp(stamp_ns)} {vals}\n"


def read_trajectory(path):
    """Arrays ``(stamps, positions, quaternions, velocities)`` from a trajectory file."""
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return np.empty(0), np.empty((0, 3)), np.empty((0, 4)), np.empty((0, 3))
    return data[:, 0], data[:, 1:4], data[:, 4:8], data[:, 8:11]


def read_map(path):
    xyz, kinds = [], []
    with open(path) as fh:
        for line in fh:
            f = line.split()
            if len(f) == 4:
                xyz.append([float(a) for a in f[:3]])
                kinds.append(int(Kind.from_letter(f[3])))
    return np.array(xyz).reshape(-1, 3), np.array(kinds, dtype=np.int8)


def read_key_values(path):
    """Plain ``key = value`` (or ``key: value``) lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":" if ":" in line else None
            if sep is None:
                raise ParseError("expected key = value", path, line_no)
            k, v = line.split(sep, 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def write_key_values(path, values):
    with open(path, "w") as fh:
        for k, v in values.items():
            fh.write(f"{k} = {v}\n")
