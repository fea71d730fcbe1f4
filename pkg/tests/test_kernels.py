"""Compiled kernels agree with the NumPy fallback."""
import subprocess
import sys

import numpy as np
import pytest

from dynamix import backend
from dynamix.model import ModelConfig, init_model
from dynamix.training import TrainConfig, compute_gradients
from gradcheck import tiny_problem

needs_compiled = pytest.mark.skipif(backend.compiled is None, reason="compiled kernels not built")


@needs_compiled
@pytest.mark.parametrize("seed", range(3))
def test_gradient_parity(seed):
    model, X, cfg, noise = tiny_problem(seed=seed, B=3)
    a = compute_gradients(model, X, cfg, noise=noise, kernels=backend.reference)
    b = compute_gradients(model, X, cfg, noise=noise, kernels=backend.compiled)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    for k in a[2]:
        scale = max(1.0, np.max(np.abs(a[2][k])))
        assert np.max(np.abs(a[2][k] - b[2][k])) <= 1e-12 * scale, k


@needs_compiled
def test_gradient_parity_default_sizes(rng):
    model = init_model(seed=1)
    X = rng.standard_normal((2, 3, 120))
    cfg = TrainConfig(context_length=100, overlap=20)
    noise = rng.standard_normal((2, 39, 3))
    a = compute_gradients(model, X, cfg, noise=noise, kernels=backend.reference)
    b = compute_gradients(model, X, cfg, noise=noise, kernels=backend.compiled)
    for k in a[2]:
        assert np.allclose(a[2][k], b[2][k], rtol=1e-10, atol=1e-14), k


@needs_compiled
def test_forecast_parity(rng):
    from dynamix.model import forecast

    model = init_model(ModelConfig(N=3, M=10, P=3, J=4), seed=2)
    model.params["W"] = rng.normal(0, 0.2, model.params["W"].shape)
    C = rng.standard_normal((3, 60))
    a, wa = forecast(model, C, 200, warmup=15, kernels=backend.reference)
    b, wb = forecast(model, C, 200, warmup=15, kernels=backend.compiled)
    assert np.allclose(a.data, b.data, atol=1e-12) and np.allclose(wa, wb, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("ties", [False, True])
def test_nearest_neighbour_parity(rng, ties):
    E = rng.standard_normal((900, 3))
    if ties:
        E = np.round(E, 1)
    for min_dist in (0.0, 0.2):
        ia, da = backend.reference.nearest_neighbors(E, 850, 20.0, min_dist)
        ib, db = backend.compiled.nearest_neighbors(E, 850, 20.0, min_dist)
        assert np.array_equal(ia, ib)
        ok = ia >= 0
        assert np.allclose(da[ok], db[ok], rtol=1e-14)


def test_nearest_neighbour_constraints(kernels, rng):
    E = rng.standard_normal((300, 2))
    idx, dist = kernels.nearest_neighbors(E, 250, 10.0, 0.1)
    i = np.flatnonzero(idx >= 0)
    j = idx[i]
    assert np.all(np.abs(i - j) > 10) and np.all(j < 250)
    assert np.all(dist[i] > 0.1)
    assert np.allclose(dist[i], np.linalg.norm(E[i] - E[j], axis=1))


def test_env_var_forces_python_backend():
    code = "from dynamix import backend; print(backend.name)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"DYNAMIX_BACKEND": "python", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"


def test_use_switches_backend():
    before = backend.name
    try:
        assert backend.use("python").BACKEND == "python"
        with pytest.raises(ValueError):
            backend.use("gpu")
    finally:
        backend.use(before)
