import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynamix.errors import DegenerateSignalError, InsufficientDataError
from dynamix.metrics import (
    MetricReport,
    average_expert_usage,
    context_parroting,
    d_stsp,
    evaluate_forecast,
    hellinger_distance,
    mae,
    occupancy,
    prediction_error,
    rosenstein_lyapunov,
    similarity,
    similarity_matrix,
    smoothed_spectrum,
)
from dynamix.systems import Trajectory, get_system, simulate

series = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).standard_normal((2, 300)))


def test_occupancy_basics(rng):
    g = occupancy(np.array([[1.0], [2.0]]))
    assert list(g.counts.values()) == [1]
    X = rng.standard_normal((3, 500))
    assert occupancy(X).counts == occupancy(X.copy()).counts
    with pytest.raises(ValueError):
        occupancy(np.empty((2, 0)))
    with pytest.raises(ValueError):
        occupancy(rng.standard_normal((6, 10)))


def test_occupancy_uniform_two_bins(rng):
    u = rng.uniform(0, 1, (1, 100_000))
    g = occupancy(u, m=2)
    f = g.frequencies([0, 1])
    assert np.all(np.abs(f - 0.5) <= 0.01)


@given(series, st.floats(0.5, 3.0))
def test_occupancy_conserves_counts(X, scale):
    g = occupancy(X)
    other = occupancy(X * scale, grid=g)
    assert other.total == X.shape[1]
    inside = other.total - other.overflow
    assert inside == sum(v for k, v in other.counts.items() if k >= 0)


def test_d_stsp_two_bin_closed_form():
    # constant truth sits in the upper bin of its unit box; half the generated points fall below
    truth = np.full((1, 10), 2.0)
    gen = np.array([[2.0] * 5 + [1.7] * 5])
    assert d_stsp(truth, gen, m=2) == pytest.approx(math.log(2), abs=1e-9)


@given(series)
def test_d_stsp_identity_and_non_negative(X):
    assert d_stsp(X, X) <= 1e-12
    Y = np.roll(X, 7, axis=1) * 1.3
    assert d_stsp(X, Y) >= 0


def test_d_stsp_rejects_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        d_stsp(rng.standard_normal((2, 50)), rng.standard_normal((3, 50)))


def test_spectrum_properties():
    t = np.arange(4096)
    f_bin = 400
    x = np.sin(2 * np.pi * f_bin * t / t.size)
    S = smoothed_spectrum(x, sigma=5)
    assert abs(S.sum() - 1) <= 1e-9 and np.all(S >= 0)
    assert S[f_bin - 15: f_bin + 16].sum() >= 0.95
    assert np.max(np.abs(smoothed_spectrum(2 * x, 5) - S)) <= 1e-9
    with pytest.raises(DegenerateSignalError):
        smoothed_spectrum(np.ones(100))
    with pytest.raises(ValueError):
        smoothed_spectrum(x[:63])


def test_hellinger_examples():
    t = np.arange(4096)
    a = np.sin(2 * np.pi * 200 * t / t.size)[None]
    b = np.sin(2 * np.pi * 400 * t / t.size)[None]
    assert hellinger_distance(a, a) <= 1e-9
    assert hellinger_distance(a, b, sigma=2) >= 0.9
    # constant generated series: no spectral overlap
    assert hellinger_distance(a, np.zeros_like(a)) == 1.0


@given(series, series)
def test_hellinger_range_and_symmetry(X, Y):
    h = hellinger_distance(X, Y, sigma=2)
    assert 0 <= h <= 1
    assert h == pytest.approx(hellinger_distance(Y, X, sigma=2), abs=1e-12)


def test_short_term_errors(rng):
    X = rng.standard_normal((3, 20))
    assert prediction_error(X, X) == 0 and mae(X, X) == 0
    Y = X.copy()
    Y[:, 9] += 1
    assert prediction_error(X, Y, 10) == pytest.approx(3.0)
    assert mae(X, X + 0.25, 10) == pytest.approx(0.25)
    F = rng.standard_normal((3, 20))
    naive_pe = sum(abs(X[i, 9] - F[i, 9]) for i in range(3))
    naive_mae = sum(abs(X[i, t] - F[i, t]) for i in range(3) for t in range(10)) / 30
    assert abs(prediction_error(X, F, 10) - naive_pe) <= 1e-12
    assert abs(mae(X, F, 10) - naive_mae) <= 1e-12
    with pytest.raises(ValueError):
        prediction_error(X, F[:, :5], 10)


def test_rosenstein_sine_is_flat():
    t = np.arange(20_000) * 0.05
    assert abs(rosenstein_lyapunov(np.sin(t), 0.05)) <= 0.05


def test_rosenstein_affine_invariance():
    x = simulate(get_system("lorenz63"), seed=3, n_steps=12_000).data[0]
    a = rosenstein_lyapunov(x, 0.01)
    b = rosenstein_lyapunov(4.0 * x - 7.0, 0.01)
    assert a > 0.3
    assert abs(a - b) <= 0.01 * abs(a)


def test_rosenstein_errors():
    with pytest.raises(DegenerateSignalError):
        rosenstein_lyapunov(np.ones(5000), 0.1)
    with pytest.raises(InsufficientDataError):
        rosenstein_lyapunov(np.sin(np.arange(300) * 0.3), 0.1)
    with pytest.raises(ValueError):
        rosenstein_lyapunov(np.sin(np.arange(3000)), 0.0)


def test_expert_usage_and_similarity():
    one_hot = np.tile([0.0, 1.0, 0.0], (5, 1))
    assert np.array_equal(average_expert_usage(one_hot), [0, 1, 0])
    assert np.allclose(average_expert_usage(np.full((4, 4), 0.25)), 0.25)
    mixed = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    assert np.allclose(average_expert_usage(mixed), [0.5, 0.5])
    assert similarity([1, 0], [0, 1]) == 0.5
    assert similarity([0.3, 0.7], [0.3, 0.7], s_max=2.0) == 1.0


@given(st.lists(st.lists(st.floats(0.01, 1), min_size=4, max_size=4), min_size=3, max_size=6))
def test_similarity_matrix_structure(rows):
    E = [np.array(r) / sum(r) for r in rows]
    S = similarity_matrix(E)
    assert np.array_equal(S, S.T)
    assert np.all(np.diag(S) == 1)
    off = S[~np.eye(len(E), dtype=bool)]
    assert np.all((off > 0) & (off <= 1))


def test_context_parroting_tiles():
    C = Trajectory(np.arange(6.0).reshape(2, 3), dt=0.5)
    out = context_parroting(C, 7)
    assert out.data.tolist() == [[0, 1, 2, 0, 1, 2, 0], [3, 4, 5, 3, 4, 5, 3]]
    assert out.dt == 0.5 and context_parroting(C, 0).data.shape == (2, 0)


def test_evaluate_forecast_report(rng):
    X = rng.standard_normal((2, 500))
    rep = evaluate_forecast(X, X, weights=np.full((500, 4), 0.25))
    assert rep.d_stsp <= 1e-12 and rep.d_hellinger <= 1e-9
    assert rep.pe_n == 0 and rep.mae == 0 and rep.lyapunov_max is None
    assert rep.expert_usage == [0.25] * 4
    assert MetricReport(**json.loads(rep.to_json())) == rep
