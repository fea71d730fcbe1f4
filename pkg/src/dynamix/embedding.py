"""Lifting low-dimensional context signals to the model's observation dimension."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegenerateSignalError, NoPeriodicityError
from .systems import Trajectory, derive_seed

__all__ = [
    "EmbeddingSpec",
    "autocorrelation",
    "select_delay_lags",
    "delay_embed",
    "positional_encode",
    "zero_fill",
    "embed_context",
    "PERIODICITY_THRESHOLD",
]

# Minimum autocorrelation at the chosen period for a positional encoding.
PERIODICITY_THRESHOLD = 0.2

KINDS = ("delay", "positional", "zero_fill", "none")


@dataclass
class EmbeddingSpec:
    kind: str
    target_dim: int
    lags: list = field(default_factory=list)
    period: int | None = None
    phases: list = field(default_factory=list)
    tau_min: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "delay":
            lags = list(self.lags)
            if any(l <= 0 for l in lags) or any(b <= a for a, b in zip(lags, lags[1:])):
                raise ValueError("delay lags must be positive and strictly increasing")
        if self.kind == "positional":
            if self.period is None or self.period <= self.tau_min:
                raise ValueError("positional period must exceed tau_min")
            if len(self.phases) != self.target_dim - 1:
                raise ValueError("need target_dim - 1 phases")

    def to_dict(self):
        d = asdict(self)
        d["lags"] = [int(x) for x in d["lags"]]
        d["phases"] = [float(x) for x in d["phases"]]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _as_series(series):
    if isinstance(series, Trajectory):
        series = series.data
    x = np.squeeze(np.asarray(series, dtype=float))
    if x.ndim != 1:
        raise ValueError("expected a univariate series")
    return x


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Normalized autocorrelation ``r(0..max_lag)`` of the mean-removed series.

    Uses the biased estimator (division by the full-length variance), so
    ``r(0) == 1`` exactly and ``|r(k)| <= 1``.
    """
    x = _as_series(series)
    n = x.size
    if not 1 <= max_lag < n:
        raise ValueError(f"need 1 <= max_lag < len(series) (got {max_lag}, {n})")
    x = x - x.mean()
    var = np.dot(x, x)
    if var <= 1e-12 * n:
        raise DegenerateSignalError("constant series has no autocorrelation structure")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    r = acov / var
    r[0] = 1.0
    return r


def select_delay_lags(series, d: int, max_lag: int | None = None) -> list:
    """Uniform lags ``(tau, 2 tau, ..., (d-1) tau)`` from the 1/e decorrelation time."""
    if d < 2:
        raise ValueError("embedding dimension d must be >= 2")
    x = _as_series(series)
    max_lag = max_lag or max(1, x.size // 4)
    r = autocorrelation(x, max_lag)
    below = np.flatnonzero(r[1:] <= np.exp(-1.0))
    if below.size:
        tau = int(below[0]) + 1
    else:
        interior = np.flatnonzero((r[1:-1] < r[:-2]) & (r[1:-1] <= r[2:]))
        tau = int(interior[0]) + 1 if interior.size else 1
    return [tau * i for i in range(1, d)]


def delay_embed(series, lags, dt: float = 1.0) -> Trajectory:
    """``x_emb[t] = (x[t], x[t - lag_1], ..., x[t - lag_{d-1}])``.

    Output column ``j`` corresponds to input index ``j + max(lags)``.
    """
    x = _as_series(series)
    lags = [int(l) for l in lags]
    if not lags:
        raise ValueError("need at least one lag")
    if any(l <= 0 for l in lags):
        raise ValueError("lags must be positive")
    if any(b <= a for a, b in zip(lags, lags[1:])):
        raise ValueError("lags must be strictly increasing")
    span = lags[-1]
    if x.size <= span:
        raise ValueError(f"series of length {x.size} too short for lag {span}")
    n_out = x.size - span
    rows = [x[span:]] + [x[span - l: span - l + n_out] for l in lags]
    return Trajectory(np.vstack(rows), dt)


def positional_encode(
    series,
    target_dim: int,
    tau_min: int,
    seed: int = 0,
    threshold: float = PERIODICITY_THRESHOLD,
    max_lag: int | None = None,
    dt: float = 1.0,
):
    """Append ``target_dim - 1`` phase-shifted sinusoids at the dominant period.

    Returns ``(trajectory, period, phases)``. Raises
    :class:`NoPeriodicityError` when the autocorrelation peak beyond
    ``tau_min`` is below ``threshold``.
    """
    if target_dim < 2:
        raise ValueError("target_dim must be >= 2")
    x = _as_series(series)
    max_lag = max_lag or x.size // 4
    if max_lag <= tau_min + 1:
        raise ValueError(f"series too short to search periods beyond tau_min={tau_min}")
    r = autocorrelation(x, max_lag)
    tau = tau_min + 1 + int(np.argmax(r[tau_min + 1:]))
    if r[tau] < threshold:
        raise NoPeriodicityError(
            f"autocorrelation peak {r[tau]:.3f} at lag {tau} is below {threshold}; "
            "use a delay embedding instead"
        )
    rng = np.random.default_rng(derive_seed(seed, "phases"))
    phases = rng.uniform(0.0, np.pi / 2, size=target_dim - 1)
    t = np.arange(x.size)
    rows = [x] + [np.sin(2 * np.pi * t / tau + p) for p in phases]
    return Trajectory(np.vstack(rows), dt), tau, phases


def zero_fill(traj: Trajectory, target_dim: int) -> Trajectory:
    """Pad with zero rows up to ``target_dim``."""
    if traj.n_steps == 0 or traj.n_dim == 0:
        raise ValueError("cannot zero-fill an empty trajectory")
    if traj.n_dim > target_dim:
        raise ValueError(f"trajectory has {traj.n_dim} rows, more than target {target_dim}")
    out = np.zeros((target_dim, traj.n_steps))
    out[: traj.n_dim] = traj.data
    return Trajectory(out, traj.dt, traj.name)


def embed_context(traj: Trajectory, kind: str, target_dim: int, seed: int = 0, tau_min: int = 10):
    """Bring a context to ``target_dim`` rows. Returns ``(trajectory, spec)``."""
    if kind == "none":
        if traj.n_dim != target_dim:
            raise ValueError(
                f"context has {traj.n_dim} dimensions but the model expects {target_dim}; "
                "use --embed zero-fill (or delay/positional for univariate data)"
            )
        return traj, EmbeddingSpec("none", target_dim)
    if kind == "zero_fill":
        return zero_fill(traj, target_dim), EmbeddingSpec("zero_fill", target_dim)
    if traj.n_dim != 1:
        raise ValueError(f"{kind} embedding needs a univariate context, got {traj.n_dim} rows")
    x = traj.data[0]
    if kind == "delay":
        lags = select_delay_lags(x, target_dim)
        return delay_embed(x, lags, traj.dt), EmbeddingSpec("delay", target_dim, lags=lags)
    if kind == "positional":
        out, tau, phases = positional_encode(x, target_dim, tau_min, seed, dt=traj.dt)
        spec = EmbeddingSpec("positional", target_dim, period=tau, phases=list(phases), tau_min=tau_min)
        return out, spec
    raise ValueError(f"unknown embedding kind {kind!r}")
