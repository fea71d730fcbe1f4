"""Geometric, spectral, short-term and dynamical scores for forecasts."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import backend
from .embedding import EmbeddingSpec, delay_embed, select_delay_lags
from .errors import DegenerateSignalError, InsufficientDataError
from .systems import Trajectory

__all__ = [
    "MetricReport",
    "HistogramGrid",
    "occupancy",
    "d_stsp",
    "smoothed_spectrum",
    "hellinger_distance",
    "prediction_error",
    "mae",
    "rosenstein_lyapunov",
    "average_expert_usage",
    "similarity",
    "similarity_matrix",
    "context_parroting",
    "evaluate_forecast",
]

KL_FLOOR = 1e-12
SIM_FLOOR = 1e-6
MIN_PAIRS = 50
OVERFLOW = -1


def _data(x):
    if isinstance(x, Trajectory):
        return x.data
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass
class MetricReport:
    d_stsp: float | None = None
    d_hellinger: float | None = None
    pe_n: float | None = None
    mae: float | None = None
    lyapunov_max: float | None = None
    expert_usage: list | None = None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class HistogramGrid:
    """Sparse ``m^N`` occupancy grid. Key ``-1`` collects out-of-bounds points."""
    m: int
    lo: np.ndarray
    hi: np.ndarray
    counts: dict

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need at least 2 bins per dimension")
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)

    @property
    def n_dim(self):
        return self.lo.size

    @property
    def total(self):
        return int(sum(self.counts.values()))

    @property
    def overflow(self):
        return int(self.counts.get(OVERFLOW, 0))

    @classmethod
    def from_bounds(cls, traj, m=30, margin=0.05):
        X = _data(traj)
        if X.shape[1] == 0:
            raise ValueError("empty trajectory")
        lo, hi = X.min(axis=1), X.max(axis=1)
        pad = margin * (hi - lo)
        lo, hi = lo - pad, hi + pad
        # constant rows (e.g. zero-filled) get a unit-width box around the value
        flat = hi - lo <= 0
        lo[flat] -= 0.5
        hi[flat] += 0.5
        return cls(m, lo, hi, {})

    def bin_index(self, X):
        """Flat bin index per column of ``X`` (``-1`` when outside the bounds)."""
        X = _data(X)
        u = (X - self.lo[:, None]) / (self.hi - self.lo)[:, None]
        idx = np.floor(u * self.m).astype(np.int64)
        idx[u == 1.0] = self.m - 1
        inside = np.all((idx >= 0) & (idx < self.m), axis=0)
        flat = np.zeros(X.shape[1], dtype=np.int64)
        for row in idx:
            flat = flat * self.m + np.clip(row, 0, self.m - 1)
        flat[~inside] = OVERFLOW
        return flat

    def frequencies(self, keys):
        n = self.total
        return np.array([self.counts.get(k, 0) / n for k in keys])


def occupancy(traj, grid: HistogramGrid | None = None, m: int = 30, margin: float = 0.05) -> HistogramGrid:
    """Bin the columns of ``traj``; bounds come from ``grid`` or from ``traj`` itself."""
    X = _data(traj)
    if X.shape[1] == 0:
        raise ValueError("empty trajectory")
    if X.shape[0] > 5:
        raise ValueError(f"occupancy grids support N <= 5, got {X.shape[0]}")
    if grid is None:
        grid = HistogramGrid.from_bounds(X, m, margin)
    elif grid.n_dim != X.shape[0]:
        raise ValueError("grid and trajectory dimensions differ")
    keys, cnt = np.unique(grid.bin_index(X), return_counts=True)
    return HistogramGrid(grid.m, grid.lo, grid.hi, dict(zip(keys.tolist(), cnt.tolist())))


def d_stsp(truth, generated, m: int = 30) -> float:
    """Binned KL divergence ``sum p_true log(p_true / p_gen)`` on truth-derived bounds.

    Generated frequencies are floored at ``1e-12`` and renormalized over the
    bins occupied by either trajectory, so identical inputs give exactly 0.
    """
    T, G = _data(truth), _data(generated)
    if T.shape[0] != G.shape[0]:
        raise ValueError("truth and generated must share N")
    pg = occupancy(T, m=m)
    qg = occupancy(G, grid=pg)
    keys = sorted(set(pg.counts) | set(qg.counts))
    p = pg.frequencies(keys)
    q = qg.frequencies(keys)
    q = (q + KL_FLOOR) / (1.0 + KL_FLOOR * len(keys))
    nz = p > 0
    return float(max(0.0, np.sum(p[nz] * np.log(p[nz] / q[nz]))))


def _gaussian_smooth(x, sigma):
    if sigma <= 0:
        return x.copy()
    radius = int(4 * sigma + 0.5)
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    k /= k.sum()
    padded = np.pad(x, radius, mode="reflect" if x.size > radius else "edge")
    return np.convolve(padded, k, mode="valid")


def smoothed_spectrum(series, sigma: float = 20.0, truncate: float = 0.1) -> np.ndarray:
    """Gaussian-smoothed power spectrum, top ``truncate`` fraction of frequencies dropped, summing to 1."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 64:
        raise ValueError("spectrum needs at least 64 samples")
    x = x - x.mean()
    if np.std(x) < 1e-12:
        raise DegenerateSignalError("constant series has no spectrum")
    power = np.abs(np.fft.rfft(x)) ** 2
    power = _gaussian_smooth(power, sigma)
    keep = int(math.ceil(power.size * (1.0 - truncate)))
    power = np.clip(power[:keep], 0.0, None)
    return power / power.sum()


def hellinger_distance(truth, generated, sigma: float = 20.0) -> float:
    """Mean over dimensions of ``sqrt(1 - sum sqrt(F G))`` between smoothed spectra.

    Both series are cut to their common length. A constant generated row
    has no spectral overlap with the truth and scores 1.
    """
    T, G = _data(truth), _data(generated)
    if T.shape[0] != G.shape[0]:
        raise ValueError("truth and generated must share N")
    n = min(T.shape[1], G.shape[1])
    out = []
    for t_row, g_row in zip(T[:, :n], G[:, :n]):
        F = smoothed_spectrum(t_row, sigma)
        try:
            Gs = smoothed_spectrum(g_row, sigma)
        except DegenerateSignalError:
            out.append(1.0)
            continue
        # 1 - sum sqrt(F G) == sum (sqrt F - sqrt G)^2 / 2 for unit-sum spectra;
        # the squared form avoids cancellation when F is close to G
        out.append(math.sqrt(min(1.0, 0.5 * np.sum((np.sqrt(F) - np.sqrt(Gs)) ** 2))))
    return float(np.mean(out))


def _aligned(truth, forecast, n):
    T, F = _data(truth), _data(forecast)
    if T.shape[0] != F.shape[0]:
        raise ValueError("truth and forecast must share N")
    if n < 1:
        raise ValueError("n must be >= 1")
    if min(T.shape[1], F.shape[1]) < n:
        raise ValueError(f"need at least {n} forecast steps")
    return T, F


def prediction_error(truth, forecast, n: int = 10) -> float:
    """L1 error at forecast step ``n`` (1-based; column ``n - 1`` of both inputs)."""
    T, F = _aligned(truth, forecast, n)
    return float(np.abs(T[:, n - 1] - F[:, n - 1]).sum())


def mae(truth, forecast, n: int = 10) -> float:
    """Mean absolute error over the first ``n`` forecast steps and all dimensions."""
    T, F = _aligned(truth, forecast, n)
    return float(np.abs(T[:, :n] - F[:, :n]).mean())


def rosenstein_lyapunov(series, dt: float, embed: EmbeddingSpec | None = None, l_t: int = 150,
                        l_s: float = 0.2, k_max: int = 50, d: int = 5, kernels=None) -> float:
    """Largest Lyapunov exponent from the mean log divergence of nearest neighbours.

    The series is z-scored first so ``l_s`` is in units of its standard
    deviation, which makes the estimate invariant to affine rescaling.
    Without ``embed`` a ``d``-dimensional delay embedding with the 1/e
    autocorrelation lag is used; the default ``d = 5`` exceeds twice the
    box dimension of the usual low-dimensional chaotic attractors. The slope of the mean log distance is
    fitted over ``k = 1 .. k_max // 2`` and divided by ``dt``.
    """
    x = np.asarray(series.data if isinstance(series, Trajectory) else series, dtype=float)
    x = np.squeeze(x)
    if x.ndim != 1:
        raise ValueError("rosenstein_lyapunov expects a scalar series")
    if dt <= 0:
        raise ValueError("dt must be positive")
    sd = x.std()
    if sd < 1e-12:
        raise DegenerateSignalError("constant series")
    x = (x - x.mean()) / sd
    if embed is None:
        embed = EmbeddingSpec("delay", d, lags=select_delay_lags(x, d))
    if embed.kind != "delay":
        raise ValueError("rosenstein_lyapunov needs a delay embedding")
    E = np.ascontiguousarray(delay_embed(x, embed.lags).data.T)
    n_ref = E.shape[0] - k_max
    if n_ref <= 2 * l_t:
        raise InsufficientDataError("series too short for the neighbour constraints")
    kernels = kernels or backend.kernels
    idx, _ = kernels.nearest_neighbors(E, n_ref, float(l_t), float(l_s))
    i = np.flatnonzero(idx >= 0)
    j = idx[i]
    if i.size < MIN_PAIRS:
        raise InsufficientDataError(f"only {i.size} valid neighbour pairs (need {MIN_PAIRS})")
    ks = np.arange(1, k_max // 2 + 1)
    ylog = np.empty(ks.size)
    for n, k in enumerate(ks):
        dist = np.sqrt(((E[i + k] - E[j + k]) ** 2).sum(axis=1))
        dist = dist[dist > 0]
        ylog[n] = np.log(dist).mean()
    slope = np.polyfit(ks, ylog, 1)[0]
    return float(slope / dt)


def average_expert_usage(weight_history) -> np.ndarray:
    W = np.asarray(weight_history, dtype=float)
    if W.ndim != 2 or W.shape[0] == 0:
        raise ValueError("need a non-empty (T, J) weight history")
    return W.mean(axis=0)


def similarity(e1, e2, s_max: float | None = None) -> float:
    """Inverse L1 distance between usage vectors, optionally rescaled by ``s_max`` and capped at 1."""
    e1, e2 = np.asarray(e1, dtype=float), np.asarray(e2, dtype=float)
    if e1.shape != e2.shape:
        raise ValueError("usage vectors must have equal length")
    raw = 1.0 / max(float(np.abs(e1 - e2).sum()), SIM_FLOOR)
    if s_max is None:
        return raw
    return min(raw / s_max, 1.0)


def similarity_matrix(usages) -> np.ndarray:
    """Pairwise similarities scaled by the largest off-diagonal score; unit diagonal."""
    E = [np.asarray(u, dtype=float) for u in usages]
    n = len(E)
    if n < 2:
        raise ValueError("need at least two usage vectors")
    raw = np.ones((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            raw[a, b] = raw[b, a] = similarity(E[a], E[b])
    off = ~np.eye(n, dtype=bool)
    S = raw / raw[off].max()
    np.fill_diagonal(S, 1.0)
    return S


def context_parroting(context, n_steps: int) -> Trajectory:
    """Baseline forecast that replays the context from its start, repeating as needed."""
    C = _data(context)
    reps = -(-n_steps // C.shape[1]) if n_steps else 0
    data = np.tile(C, (1, reps))[:, :n_steps] if reps else np.empty((C.shape[0], 0))
    return Trajectory(data, getattr(context, "dt", 1.0))


def evaluate_forecast(truth, forecast, weights=None, n: int = 10, m: int = 30,
                      sigma: float = 20.0, lyapunov_dt: float | None = None) -> MetricReport:
    """All metrics for one (ground truth, forecast) pair, both starting right after the context.

    ``lyapunov_dt`` enables the Rosenstein estimate on the first forecast
    row; failures there leave the field empty rather than raising.
    """
    rep = MetricReport(
        d_stsp=d_stsp(truth, forecast, m),
        d_hellinger=hellinger_distance(truth, forecast, sigma),
        pe_n=prediction_error(truth, forecast, n),
        mae=mae(truth, forecast, n),
    )
    if lyapunov_dt is not None:
        try:
            rep.lyapunov_max = rosenstein_lyapunov(_data(forecast)[0], lyapunov_dt)
        except (InsufficientDataError, DegenerateSignalError, ValueError):
            rep.lyapunov_max = None
    if weights is not None:
        rep.expert_usage = average_expert_usage(weights).tolist()
    return rep
