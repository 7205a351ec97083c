import numpy as np
import pytest

from lioekf import kernels

BACKENDS = kernels.available_backends()


def test_python_backend_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_accumulate_scalar_matches_dense(rng, name):
    H = rng.standard_normal((400, 6))
    z = rng.standard_normal(400)
    w = rng.uniform(0.5, 2.0, 400)
    A, b = BACKENDS[name].accumulate_scalar(H, z, w)
    assert np.allclose(A, H.T @ np.diag(w) @ H, rtol=1e-12, atol=1e-10)
    assert np.allclose(b, H.T @ (w * z), rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_accumulate_block3_matches_dense(rng, name):
    from scipy.linalg import block_diag
    n = 60
    H = rng.standard_normal((n, 3, 6))
    z = rng.standard_normal((n, 3))
    W = np.stack([(lambda a: a @ a.T + np.eye(3))(rng.standard_normal((3, 3))) for _ in range(n)])
    A, b = BACKENDS[name].accumulate_block3(H, z, W)
    Hd = H.reshape(3 * n, 6)
    Wd = block_diag(*W)
    assert np.allclose(A, Hd.T @ Wd @ Hd, rtol=1e-12, atol=1e-9)
    assert np.allclose(b, Hd.T @ Wd @ z.ravel(), rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_solve_block3(rng, name):
    n = 50
    R = np.stack([(lambda a: a @ a.T + 0.1 * np.eye(3))(rng.standard_normal((3, 3))) for _ in range(n)])
    H = rng.standard_normal((n, 3, 18))
    X = BACKENDS[name].solve_block3(R, H)
    assert np.allclose(np.einsum("nab,nbc->nac", R, X), H, atol=1e-10)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_solve_block3_rejects_indefinite(name):
    R = np.stack([np.eye(3), np.diag([1.0, -1.0, 1.0])])
    with pytest.raises(np.linalg.LinAlgError):
        BACKENDS[name].solve_block3(R, np.ones((2, 3, 4)))


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    H = rng.standard_normal((300, 6))
    z = rng.standard_normal(300)
    w = rng.uniform(0.5, 2.0, 300)
    for a, b in zip(py.accumulate_scalar(H, z, w), cy.accumulate_scalar(H, z, w)):
        assert np.abs(a - b).max() <= 1e-11 * max(1.0, np.abs(a).max())
    He = rng.standard_normal((100, 3, 6))
    ze = rng.standard_normal((100, 3))
    We = np.stack([np.eye(3) * s for s in rng.uniform(0.5, 2.0, 100)])
    for a, b in zip(py.accumulate_block3(He, ze, We), cy.accumulate_block3(He, ze, We)):
        assert np.abs(a - b).max() <= 1e-11 * max(1.0, np.abs(a).max())
    R = We + 0.01 * np.eye(3)
    Hs = rng.standard_normal((100, 3, 18))
    assert np.abs(py.solve_block3(R, Hs) - cy.solve_block3(R, Hs)).max() <= 1e-12


def test_pure_python_switch(tmp_path):
    import subprocess
    import sys
    code = "from lioekf import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"LIOEKF_PURE_PYTHON": "1", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
