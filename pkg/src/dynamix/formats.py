"""On-disk formats: DMX1 datasets, DMXM1 checkpoints, CSV trajectories, key = value configs.

Both binary formats check their magic bytes before reading anything else,
so a wrong or corrupted file fails before any allocation or compute.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import time
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError
from .model import DynaMixModel, ModelConfig
from .systems import Corpus, Trajectory

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "DATASET_MAGIC",
    "CHECKPOINT_MAGIC",
    "write_dataset",
    "read_dataset",
    "write_checkpoint",
    "read_checkpoint",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "read_config",
    "write_config",
    "write_loss_csv",
    "write_manifest",
    "config_hash",
    "data_dir",
]

DATASET_MAGIC = b"DMXCORP1"
CHECKPOINT_MAGIC = b"DMXMODL1"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<6I")
_U32 = struct.Struct("<I")


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def data_dir() -> Path:
    """Default artifact root: ``$DYNAMIX_DATA_DIR`` or the working directory."""
    return Path(os.environ.get("DYNAMIX_DATA_DIR", "."))


def _check_magic(fh, magic, what):
    head = fh.read(len(magic))
    if head != magic:
        raise FormatError(f"not a {what} file (magic {head!r}, expected {magic!r})")


# ---------------------------------------------------------------------------
# DMX1 datasets


def write_dataset(corpus: Corpus, path):
    """Header, float32 little-endian payload (sequence, row, column order), JSON trailer."""
    if not corpus.sequences:
        raise ValueError("cannot write an empty corpus")
    X = corpus.as_array()
    S, N, T = X.shape
    trailer = {
        "provenance": list(corpus.provenance),
        "params": corpus.params,
        "names": [s.name for s in corpus.sequences],
        "dt": [float(s.dt) for s in corpus.sequences],
    }
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(_HEADER.pack(DATASET_VERSION, N, T, S, corpus.context_length, corpus.overlap))
        fh.write(X.astype("<f4").tobytes(order="C"))
        fh.write(_dumps(trailer))


def read_dataset(path) -> Corpus:
    with open(path, "rb") as fh:
        _check_magic(fh, DATASET_MAGIC, "DMX1 dataset")
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise FormatError("truncated dataset header")
        version, N, T, S, T_C, overlap = _HEADER.unpack(raw)
        if version != DATASET_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        nbytes = 4 * N * T * S
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise FormatError("truncated dataset payload")
        try:
            trailer = json.loads(fh.read().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad dataset trailer: {exc}") from None
    X = np.frombuffer(payload, dtype="<f4").astype(float).reshape(S, N, T)
    names = trailer.get("names") or [None] * S
    dts = trailer.get("dt") or [1.0] * S
    seqs = [Trajectory(X[k].copy(), dts[k], names[k]) for k in range(S)]
    try:
        return Corpus(seqs, T_C, overlap, trailer.get("provenance", []), trailer.get("params", {}))
    except ValueError as exc:
        raise FormatError(f"inconsistent dataset header: {exc}") from None


# ---------------------------------------------------------------------------
# DMXM1 checkpoints


def _blob_names(config: ModelConfig):
    names = []
    for j in range(config.J):
        names += [f"expert.{j}.A", f"expert.{j}.W", f"expert.{j}.h"]
    return names + [n for n in config.param_shapes() if n not in ("A", "W", "h")]


def _blob(model, name):
    if name.startswith("expert."):
        _, j, key = name.split(".")
        return model.params[key][int(j)]
    return model.params[name]


def config_hash(cfg: dict | None) -> str | None:
    if cfg is None:
        return None
    return hashlib.sha256(_dumps(cfg)).hexdigest()


def write_checkpoint(model: DynaMixModel, path, meta: dict | None = None):
    """Magic, u32 manifest length, JSON manifest, then float32 blobs in manifest order."""
    meta = dict(model.meta if meta is None else meta)
    train_cfg = meta.get("training", {}).get("config") if isinstance(meta.get("training"), dict) else None
    blobs, entries, offset = [], [], 0
    for name in _blob_names(model.config):
        arr = np.ascontiguousarray(_blob(model, name), dtype="<f4")
        blobs.append(arr.tobytes())
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    manifest = {
        "format": "DMXM1",
        "version": CHECKPOINT_VERSION,
        "config": model.config_dict(),
        "meta": meta,
        "train_config_hash": config_hash(train_cfg),
        "blobs": entries,
    }
    head = _dumps(manifest)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_U32.pack(len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def read_checkpoint(path) -> DynaMixModel:
    with open(path, "rb") as fh:
        _check_magic(fh, CHECKPOINT_MAGIC, "DMXM1 checkpoint")
        raw = fh.read(_U32.size)
        if len(raw) != _U32.size:
            raise FormatError("truncated checkpoint header")
        (n,) = _U32.unpack(raw)
        try:
            manifest = json.loads(fh.read(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"bad checkpoint manifest: {exc}") from None
        body = fh.read()
    if manifest.get("format") != "DMXM1" or manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError("unsupported checkpoint format/version")
    try:
        config = ModelConfig(**manifest["config"]).validate()
    except (TypeError, KeyError, ConfigurationError) as exc:
        raise FormatError(f"bad model config in checkpoint: {exc}") from None
    shapes = config.param_shapes()
    expected = {f"expert.{j}.{k}": shapes[k][1:] for j in range(config.J) for k in ("A", "W", "h")}
    expected.update({k: v for k, v in shapes.items() if k not in ("A", "W", "h")})
    entries = {e["name"]: e for e in manifest.get("blobs", [])}
    if set(entries) != set(expected):
        raise FormatError("checkpoint blobs do not match the model config")
    params = {k: np.empty(v) for k, v in shapes.items()}
    for name, shape in expected.items():
        e = entries[name]
        if tuple(e["shape"]) != tuple(shape):
            raise FormatError(f"{name}: manifest shape {e['shape']} != expected {list(shape)}")
        start, stop = e["offset"], e["offset"] + e["nbytes"]
        if e["nbytes"] != 4 * int(np.prod(shape)) or stop > len(body):
            raise FormatError(f"{name}: blob size mismatch or truncated file")
        arr = np.frombuffer(body[start:stop], dtype="<f4").astype(float).reshape(shape)
        if name.startswith("expert."):
            _, j, key = name.split(".")
            params[key][int(j)] = arr
        else:
            params[name] = arr
    return DynaMixModel(config, params, manifest.get("meta", {}))


# ---------------------------------------------------------------------------
# CSV and config files


def write_trajectory_csv(traj: Trajectory, path, names=None):
    """One row per time step, one column per dimension, header of dimension names."""
    names = names or [f"x{i}" for i in range(traj.n_dim)]
    if len(names) != traj.n_dim:
        raise ValueError("need one name per dimension")
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    for row in traj.data.T:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def read_trajectory_csv(path, dt: float = 1.0) -> Trajectory:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty CSV")
    header = lines[0].split(",")
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:] if ln.strip()]
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric entry ({exc})") from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    if any(len(r) != len(header) for r in rows):
        raise FormatError(f"{path}: ragged rows")
    try:
        return Trajectory(np.array(rows).T, dt, Path(path).stem)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_config(path) -> dict:
    """Parse a ``key = value`` config (TOML subset)."""
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigurationError(f"cannot write value of type {type(v).__name__}")


def write_config(cfg: dict, path):
    """Write flat keys first, then one ``[table]`` per nested dict. ``None`` values are skipped."""
    flat = [(k, v) for k, v in cfg.items() if not isinstance(v, dict) and v is not None]
    lines = [f"{k} = {_toml_value(v)}" for k, v in flat]
    for k, v in cfg.items():
        if isinstance(v, dict):
            lines += ["", f"[{k}]"]
            lines += [f"{kk} = {_toml_value(vv)}" for kk, vv in v.items() if vv is not None]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_loss_csv(history, path):
    lines = ["epoch,mse,reg,lr"]
    lines += [f"{r['epoch']},{r['mse']!r},{r['reg']!r},{r['lr']!r}" for r in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_manifest(path, command, config, inputs, outputs, seed, started, version):
    """Run manifest, written after every other output of a command."""
    manifest = {
        "command": command,
        "config": config,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "version": version,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
