"""``dynamix`` command line: generate, train, forecast, evaluate, similarity.

Exit codes: 0 ok, 2 input/config error, 3 training divergence,
4 embedding/runtime error. Every command writes ``manifest.json`` last.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .embedding import embed_context
from .errors import (
    ConfigurationError,
    DegenerateSignalError,
    DivergenceError,
    FormatError,
    NoPeriodicityError,
    TrainingDivergenceError,
)
from .formats import (
    data_dir,
    read_checkpoint,
    read_config,
    read_dataset,
    read_trajectory_csv,
    write_checkpoint,
    write_dataset,
    write_loss_csv,
    write_manifest,
    write_trajectory_csv,
)
from .metrics import average_expert_usage, evaluate_forecast, similarity_matrix
from .model import ModelConfig, forecast, init_model
from .systems import Trajectory, derive_seed, generate_corpus, get_system, simulate, standardize
from .training import TrainConfig, train

log = logging.getLogger("dynamix")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_RUNTIME = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _out_dir(arg, default_name):
    out = Path(arg) if arg else data_dir() / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(path):
    if path is None:
        return {}
    try:
        return read_config(path)
    except FileNotFoundError:
        raise CLIError(EXIT_INPUT, f"config file not found: {path}") from None
    except ConfigurationError as exc:
        raise CLIError(EXIT_INPUT, str(exc)) from None


def _systems(names):
    if not names:
        raise CLIError(EXIT_INPUT, "config must list at least one system under `systems`")
    try:
        return [get_system(n) for n in names]
    except KeyError as exc:
        raise CLIError(EXIT_INPUT, exc.args[0]) from None


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args):
    started = time.perf_counter()
    cfg = _load_config(args.config)
    systems = _systems(cfg.get("systems"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = Path(args.out) if args.out else data_dir() / "corpus.dmx"
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        corpus = generate_corpus(
            systems,
            int(cfg.get("sequences_per_system", 10)),
            T_seq=int(cfg.get("T_seq", 550)),
            T_C=int(cfg.get("T_C", 500)),
            overlap=int(cfg.get("overlap", 50)),
            noise_level=float(cfg.get("noise_level", 0.05)),
            seed=seed,
        )
    except (ValueError, DivergenceError) as exc:
        raise CLIError(EXIT_INPUT, f"corpus generation failed: {exc}") from None
    write_dataset(corpus, out)
    write_manifest(out.with_suffix(".manifest.json"), "generate", {**cfg, "seed": seed},
                   [args.config], [out], seed, started, __version__)
    print(f"wrote {len(corpus)} sequences to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)}


def cmd_train(args):
    started = time.perf_counter()
    try:
        corpus = read_dataset(args.data)
    except FileNotFoundError:
        raise CLIError(EXIT_INPUT, f"dataset not found: {args.data}") from None
    except FormatError as exc:
        raise CLIError(EXIT_INPUT, str(exc)) from None
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    unknown = set(cfg) - _TRAIN_KEYS - _MODEL_KEYS - {"checkpoint_every"}
    if unknown:
        raise CLIError(EXIT_INPUT, f"unknown config keys: {sorted(unknown)}")
    tcfg = {k: v for k, v in cfg.items() if k in _TRAIN_KEYS}
    tcfg.setdefault("context_length", corpus.context_length)
    tcfg.setdefault("overlap", corpus.overlap)
    tcfg["seed"] = seed
    mcfg = {k: v for k, v in cfg.items() if k in _MODEL_KEYS}
    mcfg["N"] = corpus.n_dim
    try:
        config = TrainConfig(**tcfg)
        model = init_model(ModelConfig(**mcfg), seed=seed)
    except (TypeError, ConfigurationError) as exc:
        raise CLIError(EXIT_INPUT, f"invalid training config: {exc}") from None
    every = int(cfg.get("checkpoint_every", 0))

    out = _out_dir(args.out, "run")
    ckpt_dir = out / "checkpoints"
    outputs = []
    last_good = {"path": None}

    def periodic(epoch, record, m):
        if every and (epoch + 1) % every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            p = ckpt_dir / f"epoch_{epoch + 1:05d}.dmxm"
            write_checkpoint(m, p)
            outputs.append(p)
            last_good["path"] = p
        log.info("epoch %d mse %.5g reg %.5g lr %.3g", epoch, record["mse"], record["reg"], record["lr"])

    try:
        model, history = train(model, corpus, config, callbacks=[periodic])
    except TrainingDivergenceError as exc:
        p = out / "last_good.dmxm"
        write_checkpoint(exc.checkpoint, p)
        print(f"training diverged at epoch {exc.epoch}, batch {exc.batch}; "
              f"last good checkpoint: {p}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise CLIError(EXIT_INPUT, str(exc)) from None
    final = out / "model.dmxm"
    write_checkpoint(model, final)
    loss = out / "loss.csv"
    write_loss_csv(history, loss)
    outputs += [final, loss]
    write_manifest(out / "manifest.json", "train", {**cfg, "seed": seed, "train": config.to_dict()},
                   [args.data, args.config], outputs, seed, started, __version__)
    print(f"trained {len(history)} epochs; checkpoint {final}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# forecast


def _load_model(path):
    try:
        return read_checkpoint(path)
    except FileNotFoundError:
        raise CLIError(EXIT_INPUT, f"checkpoint not found: {path}") from None
    except FormatError as exc:
        raise CLIError(EXIT_INPUT, str(exc)) from None


def cmd_forecast(args):
    started = time.perf_counter()
    model = _load_model(args.model)
    try:
        ctx = read_trajectory_csv(args.context, dt=args.dt)
    except FileNotFoundError:
        raise CLIError(EXIT_INPUT, f"context not found: {args.context}") from None
    except FormatError as exc:
        raise CLIError(EXIT_INPUT, str(exc)) from None
    kind = args.embed.replace("-", "_")
    try:
        emb, spec = embed_context(ctx, kind, model.N, seed=args.seed or 0)
        if not 1 <= args.warmup <= emb.n_steps:
            raise ValueError(f"warmup {args.warmup} must lie in [1, {emb.n_steps}]")
        fc, weights = forecast(model, emb, args.steps, warmup=args.warmup)
    except (DegenerateSignalError, NoPeriodicityError, ValueError) as exc:
        raise CLIError(EXIT_RUNTIME, f"embedding/forecast failed: {exc}") from None
    out = _out_dir(args.out, "forecast")
    f_path, w_path = out / "forecast.csv", out / "weights.csv"
    write_trajectory_csv(fc, f_path)
    Path(w_path).write_text(
        _csv_text([f"w{j}" for j in range(model.J)], [[repr(float(v)) for v in row] for row in weights]),
        encoding="utf-8",
    )
    config = {"steps": args.steps, "warmup": args.warmup, "embedding": spec.to_dict()}
    write_manifest(out / "manifest.json", "forecast", config, [args.model, args.context],
                   [f_path, w_path], args.seed, started, __version__)
    print(f"wrote {args.steps}-step forecast to {f_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate / similarity


def _test_series(system, seed, key, n_total, dt=None):
    """Simulated test trajectory standardized with its context statistics."""
    tr = simulate(system, derive_seed(seed, "test", system.name, key).generate_state(1)[0],
                  n_total, dt=dt)
    return tr


def _standardize_by_context(tr, T_C):
    _, mu, sd = standardize(Trajectory(tr.data[:, :T_C], tr.dt))
    return Trajectory((tr.data - mu[:, None]) / sd[:, None], tr.dt, tr.name)


def _evaluate_one(model, system, T_C, n_eval, seed, dt_factor, warmup):
    dt = system.default_dt * dt_factor
    tr = _test_series(system, seed, 0, T_C + n_eval, dt)
    tr = _standardize_by_context(tr, T_C)
    ctx = Trajectory(tr.data[:, :T_C], tr.dt)
    kind = "none" if ctx.n_dim == model.N else "zero_fill"
    ctx, _ = embed_context(ctx, kind, model.N)
    truth = tr.data[:, T_C:]
    if truth.shape[0] < model.N:
        truth = np.vstack([truth, np.zeros((model.N - truth.shape[0], truth.shape[1]))])
    fc, w = forecast(model, ctx, n_eval, warmup=min(warmup, T_C))
    if not np.all(np.isfinite(fc.data)):
        raise FloatingPointError("forecast diverged")
    rows = slice(0, system.dim)
    rep = evaluate_forecast(truth[rows], fc.data[rows], w)
    return rep


def _run_jobs(fn, items, jobs):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _parse_list(text, cast):
    if not text:
        return None
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CLIError(EXIT_INPUT, f"cannot parse list {text!r}") from None


def cmd_evaluate(args):
    started = time.perf_counter()
    model = _load_model(args.model)
    cfg = _load_config(args.config)
    systems = _systems(cfg.get("systems"))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    T_C = int(cfg.get("context_length", 500))
    n_eval = int(cfg.get("n_steps", 10_000))
    warmup = int(cfg.get("warmup", 50))
    contexts = _parse_list(args.context_sweep, int) or [T_C]
    factors = _parse_list(args.dt_sweep, float) or [1.0]
    items = [(s, c, f) for s in systems for c in contexts for f in factors]

    def run(item):
        system, c, f = item
        try:
            rep = _evaluate_one(model, system, c, n_eval, seed, f, warmup)
            return item, "ok", rep, ""
        except Exception as exc:  # per-system isolation
            return item, "error", None, f"{type(exc).__name__}: {exc}"

    results = _run_jobs(run, items, args.jobs)
    header = ["system", "context_length", "dt", "status", "d_stsp", "d_hellinger", "pe_n", "mae", "message"]
    rows = []
    for (system, c, f), status, rep, msg in results:
        vals = [None] * 4 if rep is None else [rep.d_stsp, rep.d_hellinger, rep.pe_n, rep.mae]
        rows.append([system.name, c, repr(system.default_dt * f), status] + [_fmt(v) for v in vals] + [msg])
    out = Path(args.out) if args.out else data_dir() / "metrics.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_csv_text(header, rows), encoding="utf-8")
    write_manifest(out.with_suffix(".manifest.json"), "evaluate",
                   {**cfg, "seed": seed, "context_sweep": contexts, "dt_sweep": factors},
                   [args.model, args.config], [out], seed, started, __version__)
    n_bad = sum(r[1] != "ok" for r in results)
    print(f"evaluated {len(results)} runs ({n_bad} failed); wrote {out}")
    return EXIT_OK


def cmd_similarity(args):
    started = time.perf_counter()
    model = _load_model(args.model)
    cfg = _load_config(args.config)
    systems = _systems(cfg.get("systems"))
    if len(systems) < 2:
        raise CLIError(EXIT_INPUT, "similarity needs at least two systems")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    T_C = int(cfg.get("context_length", 500))
    n_eval = int(cfg.get("n_steps", 2000))

    def usage(system):
        tr = _standardize_by_context(_test_series(system, seed, 0, T_C), T_C)
        kind = "none" if tr.n_dim == model.N else "zero_fill"
        ctx, _ = embed_context(tr, kind, model.N)
        _, w = forecast(model, ctx, n_eval, warmup=min(50, T_C))
        return average_expert_usage(w)

    try:
        usages = _run_jobs(usage, systems, args.jobs)
    except (ValueError, DegenerateSignalError) as exc:
        raise CLIError(EXIT_RUNTIME, str(exc)) from None
    S = similarity_matrix(usages)
    names = [s.name for s in systems]
    rows = [[names[i]] + [repr(float(v)) for v in S[i]] for i in range(len(names))]
    out = Path(args.out) if args.out else data_dir() / "similarity.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(_csv_text(["system"] + names, rows), encoding="utf-8")
    write_manifest(out.with_suffix(".manifest.json"), "similarity", {**cfg, "seed": seed},
                   [args.model, args.config], [out], seed, started, __version__)
    print(f"wrote {len(names)}x{len(names)} similarity matrix to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="dynamix", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads (1 = serial, reproducible)")
        sp.add_argument("--out", default=None, help="output path (default under $DYNAMIX_DATA_DIR)")

    g = sub.add_parser("generate", help="simulate a training corpus (DMX1)")
    g.add_argument("--config", required=True)
    common(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a DMX1 corpus")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None)
    common(t)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("forecast", help="zero-shot forecast from a CSV context")
    f.add_argument("--model", required=True)
    f.add_argument("--context", required=True)
    f.add_argument("--steps", type=int, default=10_000)
    f.add_argument("--warmup", type=int, default=50)
    f.add_argument("--dt", type=float, default=1.0, help="sampling interval of the context")
    f.add_argument("--embed", choices=["delay", "positional", "zero-fill", "none"], default="none")
    common(f)
    f.set_defaults(func=cmd_forecast)

    e = sub.add_parser("evaluate", help="score forecasts on catalog systems")
    e.add_argument("--model", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--context-sweep", default=None, help="comma-separated context lengths")
    e.add_argument("--dt-sweep", default=None, help="comma-separated multipliers of each system's dt")
    common(e)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("similarity", help="expert-usage similarity matrix")
    s.add_argument("--model", required=True)
    s.add_argument("--config", required=True)
    common(s)
    s.set_defaults(func=cmd_similarity)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
