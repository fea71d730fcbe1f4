import numpy as np
import pytest
from hypothesis import given, strategies as st

from dynamix.errors import ConfigurationError
from dynamix.model import (
    ExpertParams,
    ModelConfig,
    cnn_features,
    expert_step,
    expert_weights,
    forecast,
    init_latent,
    init_model,
    mixture_step,
    state_attention,
)
from oracles import alrnn_rollout_loops, gating_weights_loops


def small(seed=0, **kw):
    cfg = dict(N=2, M=5, P=2, J=3, hidden=6)
    cfg.update(kw)
    m = init_model(ModelConfig(**cfg), seed=seed)
    rng = np.random.default_rng(seed + 100)
    for k in ("cnn_kernel", "cnn_proj", "mlp_w1", "mlp_w2", "mlp_b1", "mlp_b2", "L", "D", "h"):
        m.params[k] = rng.normal(0, 0.5, m.params[k].shape)
    m.params["W"] = rng.normal(0, 0.2, m.params["W"].shape)
    m.params["t_att"][:] = 0.7
    m.params["t_exp"][:] = 1.3
    return m


def test_expert_step_hand_example():
    e = ExpertParams(np.array([0.5, 0.5]), np.array([[0.0, 1.0], [1.0, 0.0]]), np.zeros(2), 1)
    assert np.array_equal(expert_step(e, [1.0, -1.0]), [0.5, 0.5])


def test_expert_step_identity_and_affine_composition(rng):
    M = 4
    z = rng.standard_normal(M)
    ident = ExpertParams(np.ones(M), np.zeros((M, M)), np.zeros(M), 2)
    assert np.array_equal(expert_step(ident, z), z)
    A, W, h = rng.uniform(0, 1, M), rng.normal(0, 0.3, (M, M)), rng.standard_normal(M)
    lin = ExpertParams(A, W, h, 0)
    F = np.diag(A) + W
    assert np.allclose(expert_step(lin, expert_step(lin, z)), F @ (F @ z + h) + h, atol=1e-12)
    with pytest.raises(ValueError):
        expert_step(lin, np.zeros(M + 1))


def test_cnn_features_linear_and_causal(rng):
    g = small().gating
    assert np.all(cnn_features(g, np.zeros((2, 7))) == 0)
    C = rng.standard_normal((2, 7))
    assert np.array_equal(cnn_features(g, 2 * C), 2 * cnn_features(g, C))
    assert cnn_features(g, C[:, :1]).shape == (2, 1)
    # changing the last column leaves earlier outputs alone
    C2 = C.copy()
    C2[:, -1] += 5
    assert np.array_equal(cnn_features(g, C)[:, :-1], cnn_features(g, C2)[:, :-1])


def test_state_attention_limits(rng):
    m = small()
    g = m.gating
    z = rng.standard_normal(5)
    assert np.array_equal(state_attention(g, rng.standard_normal((2, 1)), z), [1.0])
    y = g.D @ z
    C = np.stack([y + [1.0, -0.5], y - [0.5, 1.0]], axis=1)  # equal L1 distance
    assert np.allclose(state_attention(g, C, z), [0.5, 0.5], atol=1e-12)
    m.params["t_att"][:] = 1e6
    w = state_attention(m.gating, rng.standard_normal((2, 40)), z)
    assert np.max(np.abs(w - 1 / 40)) <= 1e-6


def test_state_attention_prefers_nearest_column(rng):
    g = small().gating
    z = rng.standard_normal(5)
    C = rng.standard_normal((2, 10)) * 3
    C[:, 4] = g.D @ z
    assert np.argmax(state_attention(g, C, z)) == 4


def test_expert_weights_limits(rng):
    m = small()
    m.params["mlp_w2"][:] = 0
    m.params["mlp_b2"][:] = 0.3
    g = m.gating
    z = rng.standard_normal(5)
    C = rng.standard_normal((2, 9))
    w = expert_weights(g, cnn_features(g, C), state_attention(g, C, z), z)
    assert np.allclose(w, 1 / 3, atol=1e-15)
    m.params["mlp_b2"][:] = [0.0, 0.1, 0.05]
    m.params["t_exp"][:] = 1e-6
    w = expert_weights(m.gating, cnn_features(g, C), state_attention(g, C, z), z)
    assert abs(w[1] - 1) <= 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_expert_weights_match_loop_oracle(seed):
    m = small(seed)
    rng = np.random.default_rng(seed)
    z, C = rng.standard_normal(5), rng.standard_normal((2, 8))
    g = m.gating
    w = expert_weights(g, cnn_features(g, C), state_attention(g, C, z), z)
    ref = gating_weights_loops({k: v.tolist() for k, v in m.params.items()}, C.tolist(), z.tolist())
    assert np.max(np.abs(w - ref)) <= 1e-12


@given(st.integers(0, 10_000))
def test_mixture_step_is_convex_combination(seed):
    m = small(seed % 7)
    rng = np.random.default_rng(seed)
    z, C = rng.standard_normal(5) * 3, rng.standard_normal((2, 6)) * 3
    nxt, w = mixture_step(m, z, C)
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12
    outs = np.stack([expert_step(e, z) for e in m.experts])
    assert np.all(nxt >= outs.min(0) - 1e-12) and np.all(nxt <= outs.max(0) + 1e-12)
    assert np.allclose(nxt, w @ outs, atol=1e-12)


def test_mixture_step_singleton_and_even_split(rng):
    m = small(J=1)
    z, C = rng.standard_normal(5), rng.standard_normal((2, 6))
    assert np.allclose(mixture_step(m, z, C)[0], expert_step(m.expert(0), z), atol=1e-15)
    m2 = small(J=2)
    m2.params["mlp_w2"][:] = 0
    m2.params["mlp_b2"][:] = 0
    nxt, _ = mixture_step(m2, z, C)
    assert np.allclose(nxt, 0.5 * (expert_step(m2.expert(0), z) + expert_step(m2.expert(1), z)))


def test_init_latent():
    m = small()
    assert np.array_equal(init_latent(m, np.zeros(2)), np.zeros(5))
    m.params["L"][:] = 0
    x = np.array([1.5, -2.0])
    z = init_latent(m, x)
    assert np.array_equal(z, [1.5, -2.0, 0, 0, 0])
    assert np.array_equal(z[: m.N], x)


def test_forecast_boundaries_and_determinism(kernels, rng):
    m = small()
    C = rng.standard_normal((2, 30))
    tr, w = forecast(m, C, 0, warmup=5, kernels=kernels)
    assert tr.data.shape == (2, 0) and w.shape == (0, 3)
    a, wa = forecast(m, C, 17, warmup=5, kernels=kernels)
    b, wb = forecast(m, C, 17, warmup=5, kernels=kernels)
    assert a.data.shape == (2, 17) and wa.shape == (17, 3)
    assert np.array_equal(a.data, b.data) and np.array_equal(wa, wb)
    for bad in (dict(n_steps=-1), dict(n_steps=3, warmup=0), dict(n_steps=3, warmup=31)):
        with pytest.raises(ValueError):
            forecast(m, C, kernels=kernels, **{"warmup": 5, **bad})


def test_forecast_matches_mixture_step_loop(kernels, rng):
    m = small(3)
    C = rng.standard_normal((2, 20))
    tr, w = forecast(m, C, 6, warmup=4, kernels=kernels)
    z = init_latent(m, C[:, 16])
    states, weights = [], []
    for _ in range(3 + 6):
        z, wz = mixture_step(m, z, C)
        states.append(z)
        weights.append(wz)
    assert np.allclose(tr.data, np.array(states[3:])[:, :2].T, atol=1e-12)
    assert np.allclose(w, weights[3:], atol=1e-12)


def test_one_hot_forecast_equals_expert_rollout(kernels, rng):
    m = small(1)
    m.params["mlp_w2"][:] = 0
    m.params["mlp_b2"][:] = [0.0, 50.0, 0.0]
    m.params["t_exp"][:] = 1e-3
    m.params["A"] = rng.uniform(0.2, 0.9, m.params["A"].shape)
    C = rng.standard_normal((2, 12))
    tr, w = forecast(m, C, 25, warmup=3, kernels=kernels)
    assert np.all(w[:, 1] == 1.0)
    p = m.params
    ref = alrnn_rollout_loops(p["A"][1].tolist(), p["W"][1].tolist(), p["h"][1].tolist(), m.P,
                              init_latent(m, C[:, 9]).tolist(), 2 + 25)
    assert np.allclose(tr.data, np.array(ref[2:])[:, :2].T, atol=1e-12)


def test_init_model_ranges_and_determinism():
    m = init_model(seed=5)
    assert (m.J, m.M, m.P, m.N) == (20, 20, 7, 3)
    assert np.all((m.params["A"] > 0) & (m.params["A"] <= 1))
    assert np.all(m.params["h"] == 0)
    m2 = init_model(seed=5)
    assert all(np.array_equal(m.params[k], m2.params[k]) for k in m.params)
    assert not np.array_equal(m.params["W"], init_model(seed=6).params["W"])
    with pytest.raises(ConfigurationError):
        init_model(ModelConfig(N=14, M=20, P=7))


def test_model_rejects_bad_shapes():
    m = init_model(ModelConfig(N=2, M=4, P=1, J=2), seed=0)
    params = dict(m.params)
    params["W"] = np.zeros((2, 4, 3))
    with pytest.raises(ConfigurationError):
        type(m)(m.config, params)
