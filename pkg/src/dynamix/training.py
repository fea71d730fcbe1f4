"""Sparse teacher forcing, the loss, gradients, and the RAdam training loop.

Indexing: with context length ``T_C`` and overlap ``dt_overlap`` the latent
state is initialized from column ``s0 = T_C - dt_overlap`` (0-based) of each
training sequence and stepped to the end. Step ``k`` predicts column
``s0 + k + 1``; its input has the readout units replaced by data whenever
``k > 0`` and ``k % tau_force == 0``. So ``tau_force = 1`` forces every
step and ``tau_force >= T_seq`` is a free run from the initial condition.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import backend
from .errors import ConfigurationError, TrainingDivergenceError
from .model import DynaMixModel
from .systems import Corpus, derive_seed

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "STFResult",
    "stf_forward",
    "mse_loss",
    "reg_loss",
    "compute_gradients",
    "RAdamState",
    "radam_step",
    "lr_at_epoch",
    "project_params",
    "train",
]

# Lower bound applied to both softmax temperatures after every update.
MIN_TEMPERATURE = 1e-3


@dataclass
class TrainConfig:
    tau_force: int = 10
    lam_reg: float = 0.01
    lr_start: float = 2e-3
    lr_end: float = 1e-5
    epochs: int = 2000
    batches_per_epoch: int = 50
    batch_size: int = 16
    context_length: int = 500
    overlap: int = 50
    exploration_noise: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tau_force < 1:
            raise ConfigurationError("tau_force must be >= 1")
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.batches_per_epoch < 1 or self.batch_size < 1:
            raise ConfigurationError("batches_per_epoch and batch_size must be >= 1")
        if not (self.lr_start > 0 and self.lr_end > 0):
            raise ConfigurationError("learning rates must be positive")
        if self.lr_end > self.lr_start:
            raise ConfigurationError("lr_end must not exceed lr_start")
        if self.lam_reg < 0:
            raise ConfigurationError("lam_reg must be >= 0")
        if self.overlap < 0 or self.overlap > self.context_length:
            raise ConfigurationError("need 0 <= overlap <= context_length")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("betas must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class STFResult:
    """Output of one forced unroll.

    ``predictions`` and ``targets`` are ``(N, K)``; ``states`` holds the
    latent input of each step ``(K, M)`` and ``forced`` flags the steps
    whose readout came from data.
    """
    predictions: np.ndarray
    targets: np.ndarray
    states: np.ndarray
    forced: np.ndarray
    sse: float


def _batch_array(sequences):
    if isinstance(sequences, Corpus):
        return sequences.as_array()
    if isinstance(sequences, np.ndarray):
        X = np.asarray(sequences, dtype=float)
    else:
        X = np.stack([getattr(s, "data", s) for s in sequences]).astype(float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError("expected sequences shaped (B, N, T_seq)")
    return X


def _context_features(model: DynaMixModel, C):
    """CNN features of a batch of contexts, plus the hidden layer for the backward pass."""
    k = model.params["cnn_kernel"]
    prev = np.zeros_like(C)
    prev[:, :, 1:] = C[:, :, :-1]
    hidden = np.einsum("cn,bnt->bct", k[:, :, 0], prev) + np.einsum("cn,bnt->bct", k[:, :, 1], C)
    Ct = np.einsum("nc,bct->bnt", model.params["cnn_proj"], hidden)
    return np.ascontiguousarray(Ct), hidden, prev


def _check_lengths(model, X, T_C, overlap):
    B, N, S = X.shape
    if N != model.N:
        raise ValueError(f"sequences have {N} rows, model expects {model.N}")
    if not 0 <= overlap <= T_C < S:
        raise ValueError(f"need 0 <= overlap <= T_C < T_seq (overlap={overlap}, T_C={T_C}, T_seq={S})")
    if overlap == 0 and T_C >= S - 1:
        raise ValueError("no prediction targets")
    return T_C - overlap


def _unroll(model, X, T_C, overlap, tau_force, xi, want_grad, kernels=None):
    kernels = kernels or backend.kernels
    s0 = _check_lengths(model, X, T_C, overlap)
    p = model.params
    g = model.gating
    Ct, hidden, prev = _context_features(model, X[:, :, :T_C])
    out = kernels.stf_batch(
        p["A"], p["W"], p["h"], model.P, p["D"], g.t_att, g.t_exp, float(g.attention_sign),
        p["mlp_w1"], p["mlp_b1"], p["mlp_w2"], p["mlp_b2"], p["L"],
        np.ascontiguousarray(X), Ct, s0, int(tau_force), xi, np.sqrt(p["sigma"]), want_grad,
    )
    return out, s0, hidden, prev


def stf_forward(model: DynaMixModel, sequence, tau_force: int, context_length: int = 500,
                overlap: int = 50, noise=None, kernels=None) -> STFResult:
    """Forced unroll of a single sequence ``(N, T_seq)``.

    ``noise`` is an optional standard-normal ``(K, N)`` draw for the
    exploration term; ``None`` switches it off.
    """
    X = _batch_array(sequence)
    if X.shape[0] != 1:
        raise ValueError("stf_forward takes a single sequence")
    xi = None if noise is None else np.asarray(noise, dtype=float)[None]
    (sse, pred, states, _), s0, _, _ = _unroll(
        model, X, context_length, overlap, tau_force, xi, False, kernels)
    K = pred.shape[2]
    k = np.arange(K)
    return STFResult(
        predictions=pred[0],
        targets=X[0, :, s0 + 1:].copy(),
        states=states[0],
        forced=(k > 0) & (k % tau_force == 0),
        sse=float(sse[0]),
    )


def mse_loss(pred, truth, n_terms: int | None = None) -> float:
    """Squared error summed and divided by ``n_terms`` (default: element count)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    n = pred.size if n_terms is None else n_terms
    if n <= 0:
        raise ValueError("n_terms must be positive")
    return float(np.sum((pred - truth) ** 2) / n)


def reg_loss(sigma, lam: float) -> float:
    """``lam / (1 + sum(sigma))``: rewards keeping the exploration noise large."""
    return float(lam / (1.0 + np.sum(sigma)))


def _norm_terms(N, T_seq, T_C, overlap):
    # Normalizer counts the initial-condition column, which contributes zero error.
    return N * (T_seq - T_C + overlap)


def compute_gradients(model: DynaMixModel, batch, config: TrainConfig, noise=None, kernels=None):
    """Batch-mean loss and its gradient for every parameter block.

    ``noise`` is a standard-normal ``(B, K, N)`` array or ``None`` (no
    exploration noise). Returns ``(mse, reg, grads)`` where ``grads`` maps
    parameter names to arrays shaped like the parameters.
    """
    X = _batch_array(batch)
    B, N, S = X.shape
    T_C, overlap = config.context_length, config.overlap
    (sse, _, _, g), _, hidden, prev = _unroll(
        model, X, T_C, overlap, config.tau_force, noise, True, kernels)
    scale = 1.0 / (B * _norm_terms(N, S, T_C, overlap))
    mse = float(sse.sum() * scale)
    p = model.params

    grads = {}
    for name in ("A", "W", "h", "D", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "L"):
        grads[name] = np.asarray(g[name]) * scale
    grads["t_att"] = np.array([g["t_att"] * scale])
    grads["t_exp"] = np.array([g["t_exp"] * scale])

    gCt = np.asarray(g["Ct"]) * scale
    grads["cnn_proj"] = np.einsum("bnt,bct->nc", gCt, hidden)
    ghid = np.einsum("nc,bnt->bct", p["cnn_proj"], gCt)
    gk = np.empty_like(p["cnn_kernel"])
    gk[:, :, 0] = np.einsum("bct,bnt->cn", ghid, prev)
    gk[:, :, 1] = np.einsum("bct,bnt->cn", ghid, X[:, :, :T_C])
    grads["cnn_kernel"] = gk

    sigma = p["sigma"]
    root = np.sqrt(sigma)
    g_sig = np.zeros_like(sigma)
    pos = root > 0
    g_sig[pos] = np.asarray(g["sqrt_sigma"])[pos] * scale / (2.0 * root[pos])
    reg = reg_loss(sigma, config.lam_reg)
    g_sig -= config.lam_reg / (1.0 + sigma.sum()) ** 2
    grads["sigma"] = g_sig
    return mse, reg, grads


@dataclass
class RAdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def radam_step(params: dict, grads: dict, state: RAdamState, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> RAdamState:
    """In-place rectified Adam update of every array in ``params``.

    While the variance estimate is unreliable (``rho_t <= 4``) the step
    falls back to bias-corrected momentum alone.
    """
    state.t += 1
    t = state.t
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    b2t = beta2 ** t
    rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
    bc1 = 1.0 - beta1 ** t
    if rho_t > 4.0:
        r = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / bc1
        if rho_t > 4.0:
            params[name] -= lr * r * m_hat * math.sqrt(1.0 - b2t) / (np.sqrt(v) + eps)
        else:
            params[name] -= lr * m_hat
    return state


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Exponential decay from ``lr_start`` (first epoch) to ``lr_end`` (last)."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs})")
    if config.epochs == 1:
        return config.lr_start
    frac = epoch / (config.epochs - 1)
    return config.lr_start * (config.lr_end / config.lr_start) ** frac


def project_params(params: dict):
    """Keep ``sigma`` non-negative and the temperatures away from zero."""
    np.maximum(params["sigma"], 0.0, out=params["sigma"])
    np.maximum(params["t_att"], MIN_TEMPERATURE, out=params["t_att"])
    np.maximum(params["t_exp"], MIN_TEMPERATURE, out=params["t_exp"])


def _clip(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        for g in grads.values():
            g *= max_norm / total
    return total


def _epoch_batches(n_seq, config, epoch):
    """Indices for each batch of an epoch, without replacement where possible."""
    rng = np.random.default_rng(derive_seed(config.seed, "batches", epoch))
    need = config.batches_per_epoch * config.batch_size
    order = np.concatenate([rng.permutation(n_seq) for _ in range(-(-need // n_seq))])
    return order[:need].reshape(config.batches_per_epoch, config.batch_size)


def train(model: DynaMixModel, corpus, config: TrainConfig | None = None, callbacks=(),
          kernels=None):
    """Train ``model`` in place on ``corpus``.

    Returns ``(model, history)`` where ``history`` holds one dict per epoch
    with the mean ``mse``, ``reg`` and ``loss`` and the learning rate.
    Callbacks are called as ``cb(epoch, record, model)``; returning
    ``False`` stops training early.

    A non-finite loss or gradient raises :class:`TrainingDivergenceError`
    carrying a copy of the model from the start of the failing epoch.
    """
    config = config or TrainConfig()
    X = _batch_array(corpus)
    if isinstance(corpus, Corpus):
        if corpus.context_length != config.context_length or corpus.overlap != config.overlap:
            log.info("corpus context/overlap (%d/%d) overridden by training config (%d/%d)",
                     corpus.context_length, corpus.overlap, config.context_length, config.overlap)
    _check_lengths(model, X, config.context_length, config.overlap)
    K = X.shape[2] - 1 - (config.context_length - config.overlap)
    state = RAdamState()
    history = []
    for epoch in range(config.epochs):
        good = model.copy()
        lr = lr_at_epoch(config, epoch)
        sums = np.zeros(2)
        for b, idx in enumerate(_epoch_batches(X.shape[0], config, epoch)):
            noise = None
            if config.exploration_noise:
                rng = np.random.default_rng(derive_seed(config.seed, "noise", epoch, b))
                noise = rng.standard_normal((len(idx), K, model.N))
            mse, reg, grads = compute_gradients(model, X[idx], config, noise, kernels)
            finite = math.isfinite(mse) and all(np.all(np.isfinite(g)) for g in grads.values())
            if not finite:
                raise TrainingDivergenceError(epoch, b, checkpoint=good)
            if config.grad_clip is not None:
                _clip(grads, config.grad_clip)
            radam_step(model.params, grads, state, lr, config.beta1, config.beta2, config.eps)
            project_params(model.params)
            sums += (mse, reg)
        mse, reg = (float(v) for v in sums / config.batches_per_epoch)
        record = {"epoch": epoch, "mse": mse, "reg": reg, "loss": mse + reg, "lr": float(lr)}
        history.append(record)
        log.debug("epoch %d mse %.5g reg %.5g", epoch, mse, reg)
        replies = [cb(epoch, record, model) for cb in callbacks]
        if any(r is False for r in replies):
            break
    model.meta["training"] = {"config": config.to_dict(), "epochs_run": len(history)}
    return model, history
