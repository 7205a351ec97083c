import numpy as np
import pytest

from lioekf import manifold
from lioekf.errors import NoVisibleFeatures, OutOfRange
from lioekf.iekf import initial_covariance
from lioekf.propagation import Extrinsic, Kind, ScanBundle, forward_propagate
from lioekf.sim import (SensorSpec, Trajectory, TrajectorySpec, WorldModel, sample_truth, simulate,
                        synth_imu, synth_imu_stream, synth_scan)
from lioekf.state import ProcessNoise


def bare_circle(**kw):
    base = dict(kind="Circle", radius=1.8, period=6.0, duration=6.0, static_lead=0.0, ramp=0.0,
                yaw_mode="tangent")
    base.update(kw)
    return TrajectorySpec(**base)


def test_static_truth():
    spec = TrajectorySpec("Static", duration=5.0)
    for t in (0.0, 2.5, 5.0):
        x = sample_truth(spec, t)
        assert np.array_equal(x.rot, np.eye(3)) and np.array_equal(x.pos, np.zeros(3))
        assert np.array_equal(x.vel, np.zeros(3)) and np.array_equal(x.gravity, (0, 0, -9.81))


def test_circle_closure():
    spec = bare_circle()
    a, b = sample_truth(spec, 0.0), sample_truth(spec, 6.0)
    assert np.allclose(a.pos, b.pos, atol=1e-12)


def test_circle_speed_is_constant():
    traj = Trajectory(bare_circle())
    _, _, v, _, _ = traj.evaluate(np.linspace(0, 6, 61)[:-1])
    assert np.allclose(np.linalg.norm(v, axis=1), 2 * np.pi * 1.8 / 6, atol=1e-12)


def test_truth_derivatives_are_consistent():
    traj = Trajectory(TrajectorySpec("Figure8", yaw_mode="tangent", duration=12.0))
    t = np.linspace(2.5, 11.0, 40)
    h = 1e-6
    _, p1, v1, _, _ = traj.evaluate(t + h)
    _, p0, v0, a, _ = traj.evaluate(t - h)
    _, _, v, _, _ = traj.evaluate(t)
    assert np.abs((p1 - p0) / (2 * h) - v).max() < 1e-6
    assert np.abs((v1 - v0) / (2 * h) - a).max() < 1e-5


def test_sample_truth_out_of_range():
    with pytest.raises(OutOfRange):
        sample_truth(bare_circle(), 6.5)
    with pytest.raises(OutOfRange):
        sample_truth(bare_circle(), -0.1)


def test_spec_validation():
    with pytest.raises(ValueError):
        TrajectorySpec(period=0.0)
    with pytest.raises(ValueError):
        TrajectorySpec(radius=-1.0)
    with pytest.raises(ValueError):
        SensorSpec(imu_rate=50)
    with pytest.raises(ValueError):
        SensorSpec(scan_interval=0.2)


def test_static_imu_is_gravity_reaction():
    for s in synth_imu(TrajectorySpec("Static", duration=1.0), SensorSpec()):
        assert np.array_equal(s.gyro, np.zeros(3)) and np.allclose(s.acc, (0, 0, 9.81), atol=1e-12)


@pytest.mark.parametrize("mode", ["instant", "interval", "discrete"])
def test_circle_centripetal_acceleration(mode):
    samples = synth_imu(bare_circle(), SensorSpec(imu_mode=mode))
    expected = (2 * np.pi / 6) ** 2 * 1.8
    assert abs(expected - 1.974) < 1e-3
    for s in samples[10:-10:37]:
        horizontal = np.linalg.norm(s.acc[:2])
        assert abs(horizontal - expected) < 1e-3 and abs(s.acc[2] - 9.81) < 1e-9


def test_imu_determinism():
    spec = TrajectorySpec("Figure8", duration=4.0)
    a = synth_imu_stream(spec, SensorSpec.realistic(rng_seed=42))
    b = synth_imu_stream(spec, SensorSpec.realistic(rng_seed=42))
    c = synth_imu_stream(spec, SensorSpec.realistic(rng_seed=43))
    assert np.array_equal(a.gyro, b.gyro) and np.array_equal(a.acc, b.acc)
    assert not np.array_equal(a.gyro, c.gyro)


def test_imu_noise_statistics():
    sensor = SensorSpec(gyro_noise=1e-3, acc_noise=1e-2, imu_rate=200)
    s = synth_imu_stream(TrajectorySpec("Static", duration=50.0), sensor)
    assert np.allclose(s.gyro.std(axis=0), 1e-3 * np.sqrt(200), rtol=0.05)
    assert np.allclose(s.acc.std(axis=0), 1e-2 * np.sqrt(200), rtol=0.05)


def test_imu_constant_bias():
    s = synth_imu_stream(TrajectorySpec("Static", duration=1.0),
                         SensorSpec(gyro_bias=(0.01, 0, 0), acc_bias=(0, 0.1, 0)))
    assert np.allclose(s.gyro, (0.01, 0, 0)) and np.allclose(s.acc, (0, 0.1, 9.81))


@pytest.mark.parametrize("kind", ["Circle", "Figure8"])
def test_noiseless_closure_with_forward_propagation(kind):
    spec = TrajectorySpec(kind, yaw_mode="tangent", duration=10.0, period=8.0)
    imu = synth_imu(spec, SensorSpec())
    x0 = sample_truth(spec, 0.0)
    worst_r = worst_p = 0.0
    x, P = x0, initial_covariance()
    for k in range(1, 11):
        chunk = [s for s in imu if k - 1 <= s.stamp < k]
        x, P = forward_propagate(x, P, chunk, float(k), ProcessNoise.default())
        truth = sample_truth(spec, float(k))
        worst_r = max(worst_r, manifold.rotation_angle(truth.rot.T @ x.rot))
        worst_p = max(worst_p, np.linalg.norm(truth.pos - x.pos))
    assert worst_r <= 1e-5 and worst_p <= 1e-3


def test_scan_stamps_and_plane_membership():
    spec = TrajectorySpec("Static", duration=1.0)
    world = WorldModel.single_plane(height=1.4)
    scan = synth_scan(spec, SensorSpec(points_per_scan=300), world, 0.2, 0.22)
    assert isinstance(scan, ScanBundle)
    assert scan.stamps[-1] == 0.22 and np.all(np.diff(scan.stamps) > 0) and scan.stamps[0] > 0.2
    assert np.all(scan.kinds == int(Kind.PLANE))
    assert np.abs(scan.xyz[:, 2] + 1.4).max() <= 1e-12


def test_scan_extrinsic_and_noise():
    ext = Extrinsic(manifold.exp_map((0.1, 0.2, 0.3)), (0.1, -0.05, 0.2))
    spec = TrajectorySpec("Static", duration=1.0)
    world = WorldModel.room()
    clean = synth_scan(spec, SensorSpec(points_per_scan=300, extrinsic=ext), world, 0.2, 0.3)
    assert np.allclose(ext.to_imu(clean.xyz), clean.truth_world, atol=1e-12)
    noisy = synth_scan(spec, SensorSpec(points_per_scan=3000, extrinsic=ext, point_noise_sigma=0.02),
                       world, 0.2, 0.3)
    err = ext.to_imu(noisy.xyz) - noisy.truth_world
    assert abs(err.std() - 0.02) < 0.002


def test_scan_edge_fraction():
    spec = TrajectorySpec("Static", duration=1.0)
    scan = synth_scan(spec, SensorSpec(points_per_scan=2000, edge_fraction=0.25), WorldModel.room(),
                      0.0, 0.1)
    frac = np.mean(scan.kinds == int(Kind.EDGE))
    assert 0.2 < frac < 0.3


def test_distortion_is_visible_and_compensated():
    from lioekf.propagation import undistort_scan
    spec = TrajectorySpec("Circle", period=np.pi, yaw_mode="tangent", duration=6.0,
                          static_lead=0.5, ramp=0.5)
    sensor = SensorSpec(scan_interval=0.1, points_per_scan=400, edge_fraction=0.0)
    world = WorldModel.room()
    scan = synth_scan(spec, sensor, world, 3.0, 3.1)
    x_k = sample_truth(spec, 3.1)
    und = undistort_scan(scan, x_k, Extrinsic())
    naive_G = scan.xyz @ x_k.rot.T + x_k.pos
    fixed_G = und @ x_k.rot.T + x_k.pos
    walls = 0
    for plane in world.planes:
        on = np.abs(scan.truth_world @ plane.normal - plane.offset) < 1e-9
        if on.sum() < 10:
            continue
        raw_dev = np.abs(naive_G[on] @ plane.normal - plane.offset).max()
        if raw_dev <= 5e-3:
            continue  # floor and ceiling are invariant under yaw about z
        walls += 1
        assert np.abs(fixed_G[on] @ plane.normal - plane.offset).max() <= 1e-3
    assert walls >= 2


def test_no_visible_features():
    with pytest.raises(NoVisibleFeatures):
        synth_scan(TrajectorySpec("Static", duration=1.0), SensorSpec(), WorldModel([], []), 0.0, 0.1)
    far = WorldModel.single_plane(height=100.0)
    with pytest.raises(NoVisibleFeatures):
        synth_scan(TrajectorySpec("Static", duration=1.0), SensorSpec(), far, 0.0, 0.1)


def test_simulate_determinism_and_cadence():
    spec = TrajectorySpec("Circle", duration=1.0, static_lead=0.5)
    sensor = SensorSpec.realistic(points_per_scan=50, scan_interval=0.05, rng_seed=3)
    a = simulate(spec, sensor, WorldModel.room())
    b = simulate(spec, sensor, WorldModel.room())
    assert np.array_equal(a.points, b.points) and np.array_equal(a.point_stamps_ns, b.point_stamps_ns)
    assert np.array_equal(a.imu.acc, b.imu.acc)
    assert np.all(np.diff(a.point_stamps_ns) > 0)
    assert len(a.scan_ends_ns) == 20 and a.scan_ends_ns[-1] == 1_000_000_000
    assert a.point_stamps_ns[-1] == a.scan_ends_ns[-1]
