"""Benchmark ODE systems, fixed-step integration and corpus generation.

Every vector field takes a state array of shape ``(dim, ...)`` so the same
function integrates one trajectory or a batch of them in lock step.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateSignalError, DivergenceError

__all__ = [
    "SystemDef",
    "Trajectory",
    "Corpus",
    "CATALOG",
    "get_system",
    "register_system",
    "integrate_rk4",
    "simulate",
    "add_noise",
    "standardize",
    "destandardize",
    "generate_corpus",
    "derive_seed",
]


def derive_seed(seed: int, *keys) -> np.random.SeedSequence:
    """Deterministic child seed from a base seed and any mix of ints/strings."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            entropy.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:8], "little"))
        else:
            entropy.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.SeedSequence(entropy)


@dataclass(frozen=True)
class SystemDef:
    name: str
    dim: int
    rhs: Callable[[np.ndarray, Mapping[str, float]], np.ndarray]
    default_params: Mapping[str, float]
    default_dt: float
    ic_box: tuple[tuple[float, float], ...]
    transient_steps: int = 1000
    regime: str = "chaotic"

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError(f"{self.name}: dim must be >= 2")
        if not self.default_dt > 0:
            raise ValueError(f"{self.name}: default_dt must be > 0")
        if len(self.ic_box) != self.dim:
            raise ValueError(f"{self.name}: ic_box needs one (lo, hi) per dimension")
        if self.transient_steps < 0:
            raise ValueError(f"{self.name}: transient_steps must be >= 0")

    def vector_field(self, x, params=None):
        return self.rhs(np.asarray(x, dtype=float), params or self.default_params)


@dataclass
class Trajectory:
    """Multivariate series stored dimension-major: ``data[i, t]``."""

    data: np.ndarray
    dt: float = 1.0
    name: str | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise ValueError("trajectory data must be a 2-D (N x T) array")
        if not np.all(np.isfinite(data)):
            raise ValueError("trajectory contains non-finite entries")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        self.data = data

    @property
    def n_dim(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.n_steps

    def window(self, start, stop=None) -> "Trajectory":
        return Trajectory(self.data[:, start:stop].copy(), self.dt, self.name)


@dataclass
class Corpus:
    sequences: list
    context_length: int
    overlap: int
    provenance: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.sequences:
            return
        shape = self.sequences[0].data.shape
        for s in self.sequences:
            if s.data.shape != shape:
                raise ValueError("all corpus sequences must share N and T_seq")
        if not self.context_length < shape[1]:
            raise ValueError("context length must be shorter than the sequences")
        if not self.overlap <= self.context_length:
            raise ValueError("overlap must not exceed the context length")

    def __len__(self):
        return len(self.sequences)

    @property
    def n_dim(self) -> int:
        return self.sequences[0].n_dim

    @property
    def seq_len(self) -> int:
        return self.sequences[0].n_steps

    def as_array(self) -> np.ndarray:
        """Stacked ``(S, N, T_seq)`` view of all sequences."""
        return np.stack([s.data for s in self.sequences])


# ---------------------------------------------------------------------------
# vector fields


def _lorenz(x, p):
    return np.array([
        p["sigma"] * (x[1] - x[0]),
        x[0] * (p["rho"] - x[2]) - x[1],
        x[0] * x[1] - p["beta"] * x[2],
    ])


def _rossler(x, p):
    return np.array([
        -x[1] - x[2],
        x[0] + p["a"] * x[1],
        p["b"] + x[2] * (x[0] - p["c"]),
    ])


def _selkov(x, p):
    x2y = x[0] * x[0] * x[1]
    return np.array([
        -x[0] + p["a"] * x[1] + x2y,
        p["b"] - p["a"] * x[1] - x2y,
    ])


def _finance(x, p):
    return np.array([
        x[2] + (x[1] - p["a"]) * x[0],
        1.0 - p["b"] * x[1] - x[0] * x[0],
        -x[0] - p["c"] * x[2],
    ])


def _genesio_tesi(x, p):
    return np.array([
        x[1],
        x[2],
        -p["c"] * x[0] - p["b"] * x[1] - p["a"] * x[2] + x[0] * x[0],
    ])


def _chen(x, p):
    a, b, c = p["a"], p["b"], p["c"]
    return np.array([
        a * (x[1] - x[0]),
        (c - a) * x[0] - x[0] * x[2] + c * x[1],
        x[0] * x[1] - b * x[2],
    ])


def _sprott_b(x, p):
    return np.array([x[1] * x[2], x[0] - x[1], 1.0 - x[0] * x[1]])


def _sprott_c(x, p):
    return np.array([x[1] * x[2], x[0] - x[1], 1.0 - x[0] * x[0]])


def _rucklidge(x, p):
    return np.array([
        -p["kappa"] * x[0] + p["lam"] * x[1] - x[1] * x[2],
        x[0],
        -x[2] + x[1] * x[1],
    ])


def _sprott_f(x, p):
    return np.array([x[1] + x[2], -x[0] + p["a"] * x[1], x[0] * x[0] - x[2]])


def _sprott_m(x, p):
    return np.array([-x[2], -x[0] * x[0] - x[1], p["a"] * (1.0 + x[0]) + x[1]])


def _halvorsen(x, p):
    a = p["a"]
    return np.array([
        -a * x[0] - 4.0 * x[1] - 4.0 * x[2] - x[1] * x[1],
        -a * x[1] - 4.0 * x[2] - 4.0 * x[0] - x[2] * x[2],
        -a * x[2] - 4.0 * x[0] - 4.0 * x[1] - x[0] * x[0],
    ])


def _van_der_pol(x, p):
    return np.array([x[1], p["mu"] * (1.0 - x[0] * x[0]) * x[1] - x[0]])


def _thomas(x, p):
    b = p["b"]
    return np.array([
        np.sin(x[1]) - b * x[0],
        np.sin(x[2]) - b * x[1],
        np.sin(x[0]) - b * x[2],
    ])


CATALOG: dict[str, SystemDef] = {}


def register_system(system: SystemDef, overwrite=False):
    if system.name in CATALOG and not overwrite:
        raise ValueError(f"system {system.name!r} already registered")
    CATALOG[system.name] = system
    return system


def get_system(name: str) -> SystemDef:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; known: {sorted(CATALOG)}") from None


for _sd in [
    SystemDef("lorenz63", 3, _lorenz, {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
              0.01, ((-16.8, -13.4), (-12.3, -7.8), (38.6, 42.3))),
    SystemDef("lorenz63_cyclic", 3, _lorenz, {"sigma": 10.0, "rho": 350.0, "beta": 8.0 / 3.0},
              0.002, ((-54.8, -44.8), (-79.0, -58.2), (407.5, 422.4)), regime="cyclic"),
    SystemDef("rossler", 3, _rossler, {"a": 0.2, "b": 0.2, "c": 5.7},
              0.08, ((4.1, 6.2), (-1.4, 0.5), (-1.0, 1.3))),
    SystemDef("selkov", 2, _selkov, {"a": 0.1, "b": 0.5},
              0.1, ((0.75, 0.81), (1.35, 1.46)), regime="cyclic"),
    SystemDef("finance", 3, _finance, {"a": 0.001, "b": 0.2, "c": 1.1},
              0.08, ((-0.71, -0.17), (0.32, 0.74), (-0.26, 0.03))),
    SystemDef("genesio_tesi", 3, _genesio_tesi, {"a": 0.44, "b": 1.1, "c": 1.0},
              0.08, ((0.11, 0.28), (-0.31, -0.15), (0.08, 0.25))),
    SystemDef("chen", 3, _chen, {"a": 35.0, "b": 3.0, "c": 28.0},
              0.004, ((-3.9, -0.6), (-6.8, -3.3), (20.9, 22.7))),
    SystemDef("sprott_b", 3, _sprott_b, {}, 0.08, ((-0.72, 0.38), (0.3, 0.91), (-1.71, -0.6))),
    SystemDef("sprott_c", 3, _sprott_c, {}, 0.08, ((1.05, 1.49), (0.93, 1.24), (-0.21, 0.21))),
    SystemDef("sprott_f", 3, _sprott_f, {"a": 0.5},
              0.08, ((-1.4, -0.98), (-1.81, -1.35), (1.96, 2.46))),
    SystemDef("sprott_m", 3, _sprott_m, {"a": 1.7},
              0.08, ((0.47, 0.97), (-3.0, -2.45), (1.27, 1.83))),
    SystemDef("halvorsen", 3, _halvorsen, {"a": 1.4}, 0.02, ((-3, -1), (-3, -1), (-3, -1))),
    SystemDef("rucklidge", 3, _rucklidge, {"kappa": 2.0, "lam": 6.7},
              0.07, ((-1, 1), (-1, 1), (0, 2))),
    SystemDef("van_der_pol", 2, _van_der_pol, {"mu": 1.0},
              0.1, ((1.69, 2.09), (0.67, 1.2)), regime="cyclic"),
    SystemDef("thomas", 3, _thomas, {"b": 0.18}, 0.2, ((2.57, 3.39), (2.64, 3.47), (1.27, 2.09))),
]:
    register_system(_sd)


# ---------------------------------------------------------------------------
# integration


def _rk4_batch(rhs, params, x0, dt, n_steps):
    """RK4 on a ``(dim, B)`` batch; returns ``(dim, B, n_steps)``."""
    out = np.empty(x0.shape + (n_steps,))
    x = np.array(x0, dtype=float)
    out[..., 0] = x
    half = 0.5 * dt
    sixth = dt / 6.0
    # blow-ups are reported through DivergenceError, not floating-point warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, n_steps):
            k1 = rhs(x, params)
            k2 = rhs(x + half * k1, params)
            k3 = rhs(x + half * k2, params)
            k4 = rhs(x + dt * k3, params)
            x = x + sixth * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(n)
            out[..., n] = x
    return out


def integrate_rk4(system: SystemDef, x0, dt: float, n_steps: int, params=None) -> Trajectory:
    """Fixed-step classic RK4. Column 0 is ``x0``; ``n_steps`` columns in total."""
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ValueError(f"x0 must have length {system.dim}, got shape {x0.shape}")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not np.all(np.isfinite(x0)):
        raise DivergenceError(0)
    out = _rk4_batch(system.rhs, params or system.default_params, x0[:, None], dt, n_steps)
    return Trajectory(out[:, 0, :], dt, system.name)


def _initial_conditions(system, seed, keys, count):
    x0 = np.empty((system.dim, count))
    lo = np.array([b[0] for b in system.ic_box], dtype=float)
    hi = np.array([b[1] for b in system.ic_box], dtype=float)
    for i, k in enumerate(keys):
        rng = np.random.default_rng(derive_seed(seed, "ic", system.name, *k))
        x0[:, i] = rng.uniform(lo, hi)
    return x0


def _simulate_many(system, seed, keys, n_steps, dt=None, params=None):
    dt = system.default_dt if dt is None else dt
    x0 = _initial_conditions(system, seed, keys, len(keys))
    total = system.transient_steps + n_steps
    out = _rk4_batch(system.rhs, params or system.default_params, x0, dt, total)
    return out[:, :, system.transient_steps:], dt


def simulate(system: SystemDef, seed: int, n_steps: int, dt=None, params=None) -> Trajectory:
    """Integrate from a seed-determined initial condition, discarding the transient.

    ``dt`` overrides the system's sampling interval (used by resolution sweeps).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    out, dt = _simulate_many(system, seed, [()], n_steps, dt, params)
    return Trajectory(out[:, 0, :], dt, system.name)


def add_noise(traj: Trajectory, level: float = 0.05, seed: int = 0) -> Trajectory:
    """Gaussian observation noise scaled by each row's own standard deviation."""
    if level < 0:
        raise ValueError("noise level must be >= 0")
    if level == 0:
        return Trajectory(traj.data.copy(), traj.dt, traj.name)
    rng = np.random.default_rng(derive_seed(seed, "noise"))
    scale = level * traj.data.std(axis=1, keepdims=True)
    noisy = traj.data + scale * rng.standard_normal(traj.data.shape)
    return Trajectory(noisy, traj.dt, traj.name)


def standardize(traj: Trajectory):
    """Row-wise z-scoring with population std. Returns ``(traj, mean, std)``."""
    if traj.n_steps < 2:
        raise ValueError("standardize needs at least 2 time steps")
    mean = traj.data.mean(axis=1)
    std = traj.data.std(axis=1)
    bad = np.flatnonzero(std < 1e-12)
    if bad.size:
        raise DegenerateSignalError(f"dimension(s) {bad.tolist()} have zero variance")
    data = (traj.data - mean[:, None]) / std[:, None]
    return Trajectory(data, traj.dt, traj.name), mean, std


def destandardize(traj: Trajectory, mean, std) -> Trajectory:
    data = traj.data * np.asarray(std)[:, None] + np.asarray(mean)[:, None]
    return Trajectory(data, traj.dt, traj.name)


def _pad_rows(data, n_dim):
    if data.shape[0] == n_dim:
        return data
    out = np.zeros((n_dim,) + data.shape[1:])
    out[: data.shape[0]] = data
    return out


def generate_corpus(
    systems: Sequence[SystemDef | str],
    sequences_per_system: int,
    T_seq: int = 550,
    T_C: int = 500,
    overlap: int = 50,
    noise_level: float = 0.05,
    seed: int = 0,
    n_dim: int | None = None,
) -> Corpus:
    """Simulate, noise, then standardize every sequence independently.

    Lower-dimensional systems are zero-padded to ``n_dim`` (default: the
    largest system dimension) after standardization.
    """
    if not T_C < T_seq:
        raise ValueError("context length T_C must be < T_seq")
    if not 0 <= overlap <= T_C:
        raise ValueError("overlap must satisfy 0 <= overlap <= T_C")
    if sequences_per_system < 1:
        raise ValueError("sequences_per_system must be >= 1")
    systems = [get_system(s) if isinstance(s, str) else s for s in systems]
    n_dim = n_dim or max(s.dim for s in systems)
    seqs, provenance = [], []
    for si, system in enumerate(systems):
        keys = [(si, k) for k in range(sequences_per_system)]
        raw, dt = _simulate_many(system, seed, keys, T_seq)
        for k in range(sequences_per_system):
            tr = Trajectory(raw[:, k, :], dt, system.name)
            tr = add_noise(tr, noise_level, derive_seed(seed, "noise", si, k).generate_state(1)[0])
            tr, _, _ = standardize(tr)
            seqs.append(Trajectory(_pad_rows(tr.data, n_dim), dt, system.name))
        provenance.append(system.name)
    params = {
        "systems": [s.name for s in systems],
        "system_params": {s.name: dict(s.default_params) for s in systems},
        "sequences_per_system": sequences_per_system,
        "T_seq": T_seq,
        "T_C": T_C,
        "overlap": overlap,
        "noise_level": noise_level,
        "seed": seed,
    }
    return Corpus(seqs, T_C, overlap, provenance, params)
