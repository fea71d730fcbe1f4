"""Mixture of almost-linear RNN experts with a context-driven gating network.

Parameters live in one flat ``dict[str, ndarray]`` on :class:`DynaMixModel`
so optimizers and checkpoints can treat them uniformly. The small
dataclasses :class:`ExpertParams` and :class:`GatingParams` are views onto
those arrays for the single-step functions below.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from . import backend
from .errors import ConfigurationError
from .systems import Trajectory, derive_seed

__all__ = [
    "ModelConfig",
    "ExpertParams",
    "GatingParams",
    "DynaMixModel",
    "expert_step",
    "cnn_features",
    "state_attention",
    "expert_weights",
    "mixture_step",
    "init_latent",
    "forecast",
    "init_model",
    "softmax",
]


@dataclass(frozen=True)
class ModelConfig:
    N: int = 3
    M: int = 20
    P: int = 7
    J: int = 20
    hidden: int = 32
    cnn_channels: int = 3
    # -1 weights context points nearest the projected state most; +1 is the
    # unnegated distance softmax.
    attention_sign: int = -1

    def validate(self):
        if min(self.N, self.M, self.J, self.hidden, self.cnn_channels) < 1:
            raise ConfigurationError("N, M, J, hidden and cnn_channels must be positive")
        if not 0 <= self.P <= self.M:
            raise ConfigurationError(f"need 0 <= P <= M (P={self.P}, M={self.M})")
        if self.N > self.M - self.P:
            raise ConfigurationError(
                f"readout needs N <= M - P linear units (N={self.N}, M={self.M}, P={self.P})"
            )
        if self.attention_sign not in (-1, 1):
            raise ConfigurationError("attention_sign must be -1 or +1")
        return self

    def param_shapes(self):
        N, M, J, H, Ch = self.N, self.M, self.J, self.hidden, self.cnn_channels
        return {
            "A": (J, M),
            "W": (J, M, M),
            "h": (J, M),
            "L": (M - N, N),
            "D": (N, M),
            "sigma": (N,),
            "t_att": (1,),
            "t_exp": (1,),
            "cnn_kernel": (Ch, N, 2),
            "cnn_proj": (N, Ch),
            "mlp_w1": (H, N + M),
            "mlp_b1": (H,),
            "mlp_w2": (J, H),
            "mlp_b2": (J,),
        }


PARAM_NAMES = tuple(ModelConfig().param_shapes())


@dataclass
class ExpertParams:
    A: np.ndarray
    W: np.ndarray
    h: np.ndarray
    P: int

    def __post_init__(self):
        M = self.A.shape[0]
        if self.W.shape != (M, M) or self.h.shape != (M,):
            raise ValueError("expert shapes inconsistent")
        if not 0 <= self.P <= M:
            raise ValueError("P must satisfy 0 <= P <= M")


@dataclass
class GatingParams:
    cnn_kernel: np.ndarray
    cnn_proj: np.ndarray
    D: np.ndarray
    sigma: np.ndarray
    t_att: float
    t_exp: float
    mlp_w1: np.ndarray
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    attention_sign: int = -1

    def __post_init__(self):
        if not (self.t_att > 0 and self.t_exp > 0):
            raise ValueError("temperatures must be strictly positive")
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("exploration covariance must be non-negative")


@dataclass
class DynaMixModel:
    config: ModelConfig
    params: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.config.validate()
        shapes = self.config.param_shapes()
        missing = set(shapes) - set(self.params)
        if missing:
            raise ConfigurationError(f"missing parameter blocks: {sorted(missing)}")
        for name, shape in shapes.items():
            arr = np.asarray(self.params[name], dtype=float)
            if arr.shape != shape:
                raise ConfigurationError(f"{name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr

    N = property(lambda self: self.config.N)
    M = property(lambda self: self.config.M)
    P = property(lambda self: self.config.P)
    J = property(lambda self: self.config.J)

    @property
    def L(self):
        return self.params["L"]

    def expert(self, j) -> ExpertParams:
        p = self.params
        return ExpertParams(p["A"][j], p["W"][j], p["h"][j], self.config.P)

    @property
    def experts(self):
        return [self.expert(j) for j in range(self.config.J)]

    @property
    def gating(self) -> GatingParams:
        p = self.params
        return GatingParams(
            p["cnn_kernel"], p["cnn_proj"], p["D"], p["sigma"],
            float(p["t_att"][0]), float(p["t_exp"][0]),
            p["mlp_w1"], p["mlp_b1"], p["mlp_w2"], p["mlp_b2"],
            self.config.attention_sign,
        )

    def copy(self) -> "DynaMixModel":
        return DynaMixModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            copy.deepcopy(self.meta),
        )

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def config_dict(self):
        return asdict(self.config)


def softmax(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(x - x.max())
    return e / e.sum()


def _phi(z, P):
    out = np.array(z, dtype=float)
    if P:
        out[-P:] = np.maximum(out[-P:], 0.0)
    return out


def expert_step(expert: ExpertParams, z) -> np.ndarray:
    """``A*z + W @ phi(z) + h`` with ReLU on the last ``P`` units only."""
    z = np.asarray(z, dtype=float)
    if z.shape != expert.h.shape:
        raise ValueError(f"latent state must have length {expert.h.size}")
    return expert.A * z + expert.W @ _phi(z, expert.P) + expert.h


def _ctx_array(C):
    return C.data if isinstance(C, Trajectory) else np.atleast_2d(np.asarray(C, dtype=float))


def cnn_features(gating: GatingParams, C) -> np.ndarray:
    """Causal width-2 convolution to ``cnn_channels``, then a width-1 map back to N.

    Both stages are linear and bias-free, so the whole map is linear in ``C``.
    """
    C = _ctx_array(C)
    prev = np.zeros_like(C)
    prev[:, 1:] = C[:, :-1]
    k = gating.cnn_kernel
    hidden = k[:, :, 0] @ prev + k[:, :, 1] @ C
    return gating.cnn_proj @ hidden


def state_attention(gating: GatingParams, C, z, noise_seed=None, noise=None) -> np.ndarray:
    """Softmax over L1 distances between context columns and ``D z + eps``.

    ``noise`` (a standard-normal N-vector) or ``noise_seed`` enables the
    exploration noise ``eps = sqrt(sigma) * noise``; with neither, ``eps = 0``.
    """
    C = _ctx_array(C)
    y = gating.D @ np.asarray(z, dtype=float)
    if noise is None and noise_seed is not None:
        noise = np.random.default_rng(derive_seed(noise_seed, "attention")).standard_normal(y.size)
    if noise is not None:
        y = y + np.sqrt(gating.sigma) * noise
    d = np.abs(C - y[:, None]).sum(axis=0)
    return softmax(gating.attention_sign * d / gating.t_att)


def expert_weights(gating: GatingParams, Ct, w_att, z) -> np.ndarray:
    """Softmax of a ReLU MLP over ``[Ct @ w_att, z]`` at temperature ``t_exp``."""
    v = np.concatenate([np.asarray(Ct) @ np.asarray(w_att), np.asarray(z, dtype=float)])
    hid = np.maximum(gating.mlp_w1 @ v + gating.mlp_b1, 0.0)
    return softmax((gating.mlp_w2 @ hid + gating.mlp_b2) / gating.t_exp)


def mixture_step(model: DynaMixModel, z, C, noise_seed=None, Ct=None, noise=None):
    """One gated step. Returns ``(next_state, expert_weights)``."""
    g = model.gating
    if Ct is None:
        Ct = cnn_features(g, C)
    a = state_attention(g, C, z, noise_seed=noise_seed, noise=noise)
    w = expert_weights(g, Ct, a, z)
    z = np.asarray(z, dtype=float)
    p = model.params
    phi = _phi(z, model.P)
    zj = p["A"] * z + p["W"] @ phi + p["h"]
    return w @ zj, w


def init_latent(model: DynaMixModel, x) -> np.ndarray:
    """``[x; L x]``: the readout units carry the observation itself."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.N,):
        raise ValueError(f"observation must have length {model.N}")
    return np.concatenate([x, model.L @ x])


def forecast(model: DynaMixModel, C, n_steps: int, warmup: int = 50, kernels=None):
    """Zero-shot rollout beyond a context.

    The state is initialized on context column ``T_C - warmup`` and iterated
    freely (noise off) through the rest of the context and ``n_steps`` past
    it. Returns ``(Trajectory N x n_steps, weights n_steps x J)``.
    """
    Cd = _ctx_array(C)
    dt = C.dt if isinstance(C, Trajectory) else 1.0
    N, T_C = Cd.shape
    if N != model.N:
        raise ValueError(f"context has {N} rows, model expects {model.N}")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if not 1 <= warmup <= T_C:
        raise ValueError(f"warmup must be in [1, T_C={T_C}]")
    if n_steps == 0:
        return Trajectory(np.empty((N, 0)), dt), np.empty((0, model.J))
    kernels = kernels or backend.kernels
    g = model.gating
    p = model.params
    Ct = np.ascontiguousarray(cnn_features(g, Cd))
    z0 = init_latent(model, Cd[:, T_C - warmup])
    n_total = warmup - 1 + n_steps
    Z, Wt = kernels.forecast_loop(
        p["A"], p["W"], p["h"], model.P, p["D"], g.t_att, g.t_exp, float(g.attention_sign),
        p["mlp_w1"], p["mlp_b1"], p["mlp_w2"], p["mlp_b2"],
        np.ascontiguousarray(Cd), Ct, z0, n_total,
    )
    out = Trajectory(Z[warmup - 1:, :N].T.copy(), dt)
    return out, Wt[warmup - 1:].copy()


def _normalized_pd_diagonal(rng, M):
    G = rng.standard_normal((M, M))
    S = G @ G.T
    return np.diag(S) / np.linalg.eigvalsh(S)[-1]


def init_model(config: ModelConfig | None = None, seed: int = 0, **overrides) -> DynaMixModel:
    """Fresh model with the standard initialization.

    Expert ``A`` is the diagonal of a random positive-definite matrix scaled
    by its largest eigenvalue, ``W ~ N(0, 0.01^2)``, ``h = 0``; temperatures
    start at 0.1, ``sigma`` at 0.05, ``D`` as the identity-padded readout,
    and the remaining gating weights (and ``L``) at ``N(0, 0.01^2)``.
    """
    config = ModelConfig(**{**asdict(config or ModelConfig()), **overrides})
    config.validate()
    rng = np.random.default_rng(derive_seed(seed, "init_model"))
    s = config.param_shapes()
    N, M, J = config.N, config.M, config.J
    params = {
        "A": np.stack([_normalized_pd_diagonal(rng, M) for _ in range(J)]),
        "W": rng.normal(0.0, 0.01, s["W"]),
        "h": np.zeros(s["h"]),
        "L": rng.normal(0.0, 0.01, s["L"]),
        "D": np.eye(N, M),
        "sigma": np.full(N, 0.05),
        "t_att": np.array([0.1]),
        "t_exp": np.array([0.1]),
        "cnn_kernel": rng.normal(0.0, 0.01, s["cnn_kernel"]),
        "cnn_proj": rng.normal(0.0, 0.01, s["cnn_proj"]),
        "mlp_w1": rng.normal(0.0, 0.01, s["mlp_w1"]),
        "mlp_b1": np.zeros(s["mlp_b1"]),
        "mlp_w2": rng.normal(0.0, 0.01, s["mlp_w2"]),
        "mlp_b2": np.zeros(s["mlp_b2"]),
    }
    return DynaMixModel(config, params, {"init_seed": int(seed)})
