import csv
import json

import numpy as np
import pytest

from dynamix.cli import main
from dynamix.formats import read_checkpoint, write_config, write_trajectory_csv
from dynamix.systems import Trajectory


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_config({"systems": ["lorenz63", "rossler"], "sequences_per_system": 4, "T_seq": 60,
                  "T_C": 40, "overlap": 5, "seed": 1}, d / "gen.toml")
    write_config({"epochs": 2, "batches_per_epoch": 2, "batch_size": 2, "J": 3, "M": 8, "P": 2,
                  "checkpoint_every": 1, "seed": 0}, d / "train.toml")
    write_config({"systems": ["lorenz63", "sprott_c", "not_a_system"]}, d / "bad.toml")
    write_config({"systems": ["lorenz63", "rossler"], "context_length": 100, "n_steps": 300,
                  "warmup": 20, "seed": 0}, d / "eval.toml")
    assert main(["generate", "--config", str(d / "gen.toml"), "--out", str(d / "c.dmx")]) == 0
    assert main(["train", "--data", str(d / "c.dmx"), "--config", str(d / "train.toml"),
                 "--out", str(d / "run")]) == 0
    return d


def test_generate_is_reproducible(workdir):
    again = workdir / "c2.dmx"
    assert main(["generate", "--config", str(workdir / "gen.toml"), "--out", str(again)]) == 0
    assert again.read_bytes() == (workdir / "c.dmx").read_bytes()
    other = workdir / "c3.dmx"
    assert main(["generate", "--config", str(workdir / "gen.toml"), "--seed", "9", "--out", str(other)]) == 0
    assert other.read_bytes() != again.read_bytes()


def test_train_outputs(workdir):
    run = workdir / "run"
    model = read_checkpoint(run / "model.dmxm")
    assert (model.J, model.M, model.N) == (3, 8, 3)
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mse,reg,lr" and len(lines) == 3
    assert sorted(p.name for p in (run / "checkpoints").iterdir()) == ["epoch_00001.dmxm", "epoch_00002.dmxm"]
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seed"] == 0


def test_forecast_command(workdir, rng):
    t = np.arange(400) * 0.1
    uni = workdir / "uni.csv"
    write_trajectory_csv(Trajectory(np.sin(t)[None]), uni)
    out = workdir / "fc"
    model = str(workdir / "run" / "model.dmxm")
    assert main(["forecast", "--model", model, "--context", str(uni), "--steps", "25",
                 "--embed", "delay", "--warmup", "10", "--out", str(out)]) == 0
    rows = list(csv.reader((out / "forecast.csv").open()))
    assert rows[0] == ["x0", "x1", "x2"] and len(rows) == 26
    w = np.loadtxt(out / "weights.csv", delimiter=",", skiprows=1)
    assert w.shape == (25, 3) and np.allclose(w.sum(axis=1), 1)
    # a 1-D context cannot be used without an embedding
    assert main(["forecast", "--model", model, "--context", str(uni), "--steps", "5",
                 "--out", str(out)]) == 4


def test_evaluate_and_similarity(workdir):
    model = str(workdir / "run" / "model.dmxm")
    out = workdir / "metrics.csv"
    assert main(["evaluate", "--model", model, "--config", str(workdir / "eval.toml"),
                 "--context-sweep", "100,1", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 4
    ok = [r for r in rows if r["context_length"] == "100"]
    assert all(r["status"] == "ok" and float(r["d_hellinger"]) <= 1 for r in ok)
    short = [r for r in rows if r["context_length"] == "1"]
    assert all(r["status"] == "error" and r["message"] for r in short)
    sim = workdir / "sim.csv"
    assert main(["similarity", "--model", model, "--config", str(workdir / "eval.toml"),
                 "--out", str(sim)]) == 0
    S = np.loadtxt(sim, delimiter=",", skiprows=1, usecols=(1, 2))
    assert np.array_equal(S, S.T) and np.all(np.diag(S) == 1)


def test_input_errors(workdir, tmp_path, capsys):
    assert main(["generate", "--config", str(workdir / "bad.toml"), "--out", str(tmp_path / "x.dmx")]) == 2
    assert main(["generate", "--config", str(tmp_path / "missing.toml")]) == 2
    bad = tmp_path / "bad.dmx"
    raw = bytearray((workdir / "c.dmx").read_bytes())
    raw[0] = ord("X")
    bad.write_bytes(bytes(raw))
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "r")]) == 2
    assert "magic" in capsys.readouterr().err
    assert main(["forecast", "--model", str(bad), "--context", "x.csv"]) == 2
    assert main(["generate", "--config", str(workdir / "gen.toml"), "--jobs", "0"]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(workdir, tmp_path):
    write_config({"epochs": 4, "batches_per_epoch": 1, "batch_size": 2, "J": 2, "M": 8, "P": 2,
                  "lr_start": 1e8, "lr_end": 1e8}, tmp_path / "hot.toml")
    code = main(["train", "--data", str(workdir / "c.dmx"), "--config", str(tmp_path / "hot.toml"),
                 "--out", str(tmp_path / "hot")])
    assert code == 3
    assert (tmp_path / "hot" / "last_good.dmxm").exists()
