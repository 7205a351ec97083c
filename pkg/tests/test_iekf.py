import time

import numpy as np
import pytest

from lioekf import manifold
from lioekf.errors import NoCorrespondences, NotStatic, SingularInnovation, SingularPrior, TooShort
from lioekf.feature_map import Correspondence, FeatureMap, compute_residual, transform_to_global
from lioekf.iekf import (IekfConfig, MeasurementNoise, compute_J, gain_fast, gain_standard,
                         initial_covariance, iterated_update, measurement_jacobian,
                         static_initialize)
from lioekf.propagation import Extrinsic, Kind
from lioekf.sim import SensorSpec, TrajectorySpec, WorldModel, sample_truth, synth_scan
from lioekf.state import DIM, ImuSample, NavState

from conftest import random_state
from oracles import central_jacobian, gain_mp


def plane_corr(u, q=(0, 0, 0)):
    u = np.asarray(u, float)
    return Correspondence(u / np.linalg.norm(u), np.asarray(q, float), Kind.PLANE)


def edge_corr(u, q=(0, 0, 0)):
    u = np.asarray(u, float)
    return Correspondence(u / np.linalg.norm(u), np.asarray(q, float), Kind.EDGE)


# --- measurement Jacobian ---------------------------------------------------

def test_jacobian_zero_lever_arm():
    H = measurement_jacobian(NavState(), Extrinsic(), np.zeros(3), plane_corr((0, 0, 1)))
    expect = np.zeros((1, DIM))
    expect[0, 5] = 1.0
    assert np.array_equal(H, expect)


def test_jacobian_translation_block_is_normal(rng):
    for _ in range(10):
        u = rng.standard_normal(3)
        corr = plane_corr(u)
        H = measurement_jacobian(random_state(rng), Extrinsic(), rng.standard_normal(3), corr)
        assert np.allclose(H[0, 3:6], corr.u) and np.array_equal(H[0, 6:], np.zeros(12))


@pytest.mark.parametrize("make", [plane_corr, edge_corr])
def test_jacobian_matches_finite_differences(rng, make):
    worst = 0.0
    for _ in range(50):
        x = random_state(rng)
        ext = Extrinsic(manifold.exp_map(rng.standard_normal(3) * 0.3), rng.standard_normal(3) * 0.2)
        p = rng.standard_normal(3) * 5
        corr = make(rng.standard_normal(3), rng.standard_normal(3))

        def z(dx):
            return compute_residual(transform_to_global(x.boxplus(dx), ext, p)[0], corr)

        fd = central_jacobian(z, np.zeros(DIM))
        worst = max(worst, np.abs(fd - measurement_jacobian(x, ext, p, corr)).max())
    assert worst <= 1e-6


# --- J projection -----------------------------------------------------------

def test_J_identity_when_equal(rng):
    x = random_state(rng)
    assert np.array_equal(compute_J(x, x), np.eye(DIM))


def test_J_continuous_at_identity(rng):
    x = random_state(rng)
    y = x.replace(rot=x.rot @ manifold.exp_map((1e-9, 0, 0)))
    assert np.abs(compute_J(y, x) - np.eye(DIM)).max() <= 1e-8


def test_J_matches_finite_differences(rng):
    x_k = random_state(rng)
    x_kappa = x_k.boxplus(np.concatenate([[0.3, 0.1, -0.2], rng.standard_normal(15) * 0.1]))
    fd = central_jacobian(lambda dx: x_kappa.boxplus(dx).boxminus(x_k), np.zeros(DIM))
    assert np.abs(fd - compute_J(x_kappa, x_k)).max() <= 1e-5


# --- gains ------------------------------------------------------------------

def random_spd(rng, n, floor=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + floor * np.eye(n)


def random_problem(rng, m, n=DIM):
    P = random_spd(rng, n)
    H = rng.standard_normal((m, n))
    if m % 3 == 0 and rng.random() < 0.5:
        R = np.stack([random_spd(rng, 3, 0.05) for _ in range(m // 3)])
    else:
        R = rng.uniform(0.05, 2.0, m)
    return P, H, R


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_gain_scalar_examples():
    assert np.isclose(gain_standard([[1.0]], [[1.0]], [1.0])[0, 0], 0.5)
    assert np.isclose(gain_fast([[1.0]], [[1.0]], [1.0])[0, 0], 0.5)


def test_gain_zero_sensitivity(rng):
    P = random_spd(rng, DIM)
    assert np.array_equal(gain_standard(P, np.zeros((4, DIM)), np.ones(4)), np.zeros((DIM, 4)))
    assert np.abs(gain_fast(P, np.zeros((4, DIM)), np.ones(4))).max() == 0.0


def test_gain_standard_matches_extended_precision(rng):
    P = random_spd(rng, DIM)
    H = rng.standard_normal((50, DIM))
    R = rng.uniform(0.05, 2.0, 50)
    ref = gain_mp(P, H, np.diag(R))
    assert rel(gain_standard(P, H, R), ref) <= 1e-10
    assert rel(gain_fast(P, H, R), ref) <= 1e-10


def test_gain_equivalence_over_random_instances(rng):
    worst = 0.0
    for i in range(500):
        m = (1, 7, 50, 200)[i % 4]
        P, H, R = random_problem(rng, m)
        worst = max(worst, rel(gain_fast(P, H, R), gain_standard(P, H, R)))
    assert worst <= 1e-9


def test_gain_accepts_mixed_block_forms(rng):
    P = random_spd(rng, DIM)
    H = rng.standard_normal((7, DIM))
    blocks = [np.array([0.5]), random_spd(rng, 3), np.array([0.2, 0.3]), np.array([[0.7]])]
    dense = np.zeros((7, 7))
    dense[0, 0] = 0.5
    dense[1:4, 1:4] = blocks[1]
    dense[4, 4], dense[5, 5], dense[6, 6] = 0.2, 0.3, 0.7
    ref = gain_standard(P, H, dense)
    assert rel(gain_fast(P, H, blocks), ref) <= 1e-12
    assert rel(gain_standard(P, H, blocks), ref) <= 1e-12


def test_matrix_inverse_lemma(rng):
    worst = 0.0
    for i in range(500):
        m = (1, 7, 50, 200)[i % 4]
        P, H, R = random_problem(rng, m)
        Rd = np.diag(R) if R.ndim == 1 else _block_diag(R)
        info_form = np.linalg.inv(np.linalg.inv(P) + H.T @ np.linalg.solve(Rd, H))
        cov_form = P - P @ H.T @ np.linalg.solve(H @ P @ H.T + Rd, H @ P)
        worst = max(worst, rel(info_form, cov_form))
    assert worst <= 1e-9


def _block_diag(blocks):
    from scipy.linalg import block_diag
    return block_diag(*blocks)


def test_singular_innovation():
    # identical rows and negligible noise: H P H^T + R has rank one
    H = np.ones((3, DIM))
    with pytest.raises(SingularInnovation):
        gain_standard(np.eye(DIM), H, np.full(3, 1e-20))


def test_singular_prior(rng):
    P = np.diag(np.r_[np.ones(17), 0.0])
    with pytest.raises(SingularPrior):
        gain_fast(P, rng.standard_normal((5, DIM)), np.ones(5))
    with pytest.raises(SingularPrior):
        gain_fast(np.diag(np.r_[np.ones(17), 1e-14]), rng.standard_normal((5, DIM)), np.ones(5))


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def test_gain_complexity_scaling(rng):
    ms = np.array([500, 1000, 2000, 4000, 8000])
    fast, std = [], []
    for m in ms:
        P = random_spd(rng, DIM)
        H = rng.standard_normal((m, DIM))
        R = np.stack([random_spd(rng, 3, 0.05) for _ in range(m // 3)]) if m % 3 == 0 \
            else rng.uniform(0.05, 2.0, m)
        fast.append(_time(lambda: gain_fast(P, H, R), 20))
        std.append(_time(lambda: gain_standard(P, H, R), 3 if m < 4000 else 1))
    slope_fast = np.polyfit(np.log(ms), np.log(fast), 1)[0]
    slope_std = np.polyfit(np.log(ms), np.log(std), 1)[0]
    assert slope_fast <= 1.2, slope_fast
    assert slope_std >= 2.0, slope_std


# --- iterated update ----------------------------------------------------------

@pytest.fixture(scope="module")
def static_scene():
    """Noiseless static pose in the room, a dense map and a sparser query scan.

    The map must be dense enough (about 6 cm spacing) that points near a
    corner find neighbours on their own surface.
    """
    spec = TrajectorySpec("Static", duration=2.0)
    world = WorldModel.room()
    dense = synth_scan(spec, SensorSpec(scan_interval=0.1, points_per_scan=100_000), world, 0.9, 1.0)
    fmap = FeatureMap()
    fmap.add(dense.truth_world, dense.kinds)
    query = synth_scan(spec, SensorSpec(scan_interval=0.1, points_per_scan=500, rng_seed=7),
                       world, 1.0, 1.1)
    truth = sample_truth(spec, 1.1)
    return fmap, query, truth


def test_update_fixed_point(static_scene):
    fmap, scan, truth = static_scene
    res = iterated_update(truth, initial_covariance(), scan.xyz, fmap, Extrinsic(), kinds=scan.kinds)
    assert res.iterations_used == 1 and res.converged
    assert np.linalg.norm(res.x.boxminus(truth)) <= 1e-4


def test_update_converges_from_perturbation(static_scene):
    fmap, scan, truth = static_scene
    axis = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    x0 = truth.replace(rot=truth.rot @ manifold.exp_map(0.05 * axis),
                       pos=truth.pos + 0.1 * np.array([0.6, 0.0, -0.8]))
    P = np.diag(np.r_[np.full(3, 0.05 ** 2), np.full(3, 0.1 ** 2), np.full(12, 1e-2)])
    res = iterated_update(x0, P, scan.xyz, fmap, Extrinsic(), IekfConfig(max_iterations=20),
                          kinds=scan.kinds)
    assert res.converged and res.last_step < IekfConfig().epsilon
    assert manifold.rotation_angle(truth.rot.T @ res.x.rot) <= 1e-3
    assert np.linalg.norm(res.x.pos - truth.pos) <= 1e-3


@pytest.mark.parametrize("seed", range(1, 6))
def test_update_converges_for_other_scans(static_scene, seed):
    fmap, _, truth = static_scene
    spec = TrajectorySpec("Static", duration=2.0)
    scan = synth_scan(spec, SensorSpec(scan_interval=0.1, points_per_scan=500, rng_seed=seed),
                      WorldModel.room(), 1.0, 1.1)
    r = np.random.default_rng(seed)
    axis = r.standard_normal(3)
    shift = r.standard_normal(3)
    x0 = truth.replace(rot=manifold.exp_map(0.05 * axis / np.linalg.norm(axis)),
                       pos=truth.pos + 0.1 * shift / np.linalg.norm(shift))
    P = np.diag(np.r_[np.full(3, 0.05 ** 2), np.full(3, 0.1 ** 2), np.full(12, 1e-2)])
    res = iterated_update(x0, P, scan.xyz, fmap, Extrinsic(), IekfConfig(max_iterations=20),
                          kinds=scan.kinds)
    assert manifold.rotation_angle(truth.rot.T @ res.x.rot) <= 1e-3
    assert np.linalg.norm(res.x.pos - truth.pos) <= 1e-3


def test_update_covariance_contracts_and_stays_psd(static_scene):
    fmap, scan, truth = static_scene
    x0 = truth.replace(pos=truth.pos + (0.02, 0, 0))
    res = iterated_update(x0, initial_covariance(), scan.xyz, fmap, Extrinsic(), kinds=scan.kinds)
    assert np.trace(res.P) < np.trace(res.P_prior)
    assert np.linalg.norm(res.P - res.P.T) <= 1e-9
    assert np.linalg.eigvalsh(res.P).min() >= -1e-9 * np.trace(res.P)


def test_update_debug_jacobians(static_scene):
    fmap, scan, truth = static_scene
    x0 = truth.replace(rot=truth.rot @ manifold.exp_map((0.02, -0.01, 0.03)))
    res = iterated_update(x0, initial_covariance(), scan.xyz, fmap, Extrinsic(),
                          IekfConfig(debug=True), kinds=scan.kinds)
    assert len(res.jacobian_errors) == res.iterations_used
    assert max(res.jacobian_errors) <= 1e-6


def test_update_without_correspondences(static_scene):
    fmap, _, _ = static_scene
    far = np.full((10, 3), 500.0)
    with pytest.raises(NoCorrespondences):
        iterated_update(NavState(), initial_covariance(), far, fmap, Extrinsic(),
                        kinds=np.zeros(10, np.int8))


def test_update_iterations_bounded(static_scene):
    fmap, scan, truth = static_scene
    x0 = truth.replace(pos=truth.pos + (0.1, 0.05, 0))
    res = iterated_update(x0, initial_covariance({"pos": 0.1}), scan.xyz, fmap, Extrinsic(),
                          IekfConfig(max_iterations=2, epsilon=1e-12), kinds=scan.kinds)
    assert res.iterations_used == 2 and not res.converged


def test_measurement_noise_validation():
    with pytest.raises(ValueError):
        MeasurementNoise(0.0)
    cov = MeasurementNoise(0.1).edge_cov(np.array([0, 0, 1.0]))
    info = MeasurementNoise(0.1).edge_info_batch(np.array([[0, 0, 1.0]]))[0]
    assert np.allclose(cov @ info, np.eye(3))


# --- static initialisation --------------------------------------------------

def _stream(n, gyro, acc, rate=200.0):
    return [ImuSample(i / rate, np.asarray(g, float), np.asarray(a, float))
            for i, (g, a) in enumerate(zip(gyro, acc))]


def test_static_init_noiseless():
    n = 401
    imu = _stream(n, [(0.01, 0, 0)] * n, [(0, 0, 9.81)] * n)
    x, P, Q = static_initialize(imu, 2.0)
    assert np.allclose(x.bias_gyro, (0.01, 0, 0)) and np.allclose(x.gravity, (0, 0, -9.81))
    assert np.array_equal(x.rot, np.eye(3)) and np.array_equal(x.pos, np.zeros(3))
    assert np.array_equal(x.bias_acc, np.zeros(3))
    assert P.shape == (DIM, DIM) and np.all(np.diag(P) > 0)


def test_static_init_standard_error():
    # the 3-sigma bound on the norm of a 3-axis error holds for ~97% of draws
    bias = np.array([0.003, -0.002, 0.001])
    within = 0
    for seed in range(100):
        r = np.random.default_rng(seed)
        gyro = bias + 1e-3 * r.standard_normal((401, 3))
        acc = (0, 0, 9.81) + 1e-2 * r.standard_normal((401, 3))
        x, _, Q = static_initialize(_stream(401, gyro, acc), 2.0)
        within += np.linalg.norm(x.bias_gyro - bias) <= 3 * 1e-3 / np.sqrt(400)
        assert np.all(np.abs(x.bias_gyro - bias) <= 4.5 * 1e-3 / np.sqrt(400))
        assert np.allclose(np.sqrt(np.diag(Q.cov)[:3]), 1e-3, rtol=0.2)
    assert within >= 90


def test_static_init_rejects_motion():
    t = np.arange(401) / 200.0
    gyro = np.column_stack([np.zeros(401), np.zeros(401), 0.25 * t])
    with pytest.raises(NotStatic):
        static_initialize(_stream(401, gyro, [(0, 0, 9.81)] * 401), 2.0)


def test_static_init_too_short():
    with pytest.raises(TooShort):
        static_initialize(_stream(100, [(0, 0, 0)] * 100, [(0, 0, 9.81)] * 100), 2.0)
    with pytest.raises(TooShort):
        static_initialize([], 2.0)
