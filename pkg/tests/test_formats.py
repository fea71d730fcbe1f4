import json

import numpy as np
import pytest

from dynamix.errors import ConfigurationError, FormatError
from dynamix.formats import (
    CHECKPOINT_MAGIC,
    DATASET_MAGIC,
    config_hash,
    read_checkpoint,
    read_config,
    read_dataset,
    read_trajectory_csv,
    write_checkpoint,
    write_config,
    write_dataset,
    write_loss_csv,
    write_trajectory_csv,
)
from dynamix.model import ModelConfig, init_model
from dynamix.systems import Trajectory, generate_corpus


@pytest.fixture
def corpus():
    return generate_corpus(["lorenz63", "rossler"], 2, T_seq=30, T_C=20, overlap=5, seed=3)


def test_dataset_round_trip_is_byte_identical(corpus, tmp_path):
    a, b = tmp_path / "a.dmx", tmp_path / "b.dmx"
    write_dataset(corpus, a)
    back = read_dataset(a)
    write_dataset(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:8] == DATASET_MAGIC
    assert np.array_equal(back.as_array(), corpus.as_array().astype(np.float32))
    assert [s.name for s in back.sequences] == [s.name for s in corpus.sequences]
    assert (back.context_length, back.overlap) == (20, 5)


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    m = init_model(ModelConfig(N=3, M=6, P=2, J=3), seed=2)
    m.meta["training"] = {"config": {"epochs": 3}, "epochs_run": 3}
    a, b = tmp_path / "a.dmxm", tmp_path / "b.dmxm"
    write_checkpoint(m, a)
    back = read_checkpoint(a)
    write_checkpoint(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert back.config == m.config and back.meta == m.meta
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k].astype(np.float32))
    head_len = int.from_bytes(a.read_bytes()[8:12], "little")
    manifest = json.loads(a.read_bytes()[12:12 + head_len])
    assert manifest["train_config_hash"] == config_hash({"epochs": 3})


@pytest.mark.parametrize("kind", ["dataset", "checkpoint"])
def test_corrupted_magic_is_rejected(kind, corpus, tmp_path):
    p = tmp_path / "x.bin"
    if kind == "dataset":
        write_dataset(corpus, p)
        reader = read_dataset
    else:
        write_checkpoint(init_model(ModelConfig(N=3, M=6, P=2, J=2)), p)
        reader = read_checkpoint
    raw = bytearray(p.read_bytes())
    raw[3] ^= 0xFF
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        reader(p)


def test_truncated_and_mismatched_files(corpus, tmp_path):
    p = tmp_path / "c.dmx"
    write_dataset(corpus, p)
    p.write_bytes(p.read_bytes()[:40])
    with pytest.raises(FormatError):
        read_dataset(p)
    q = tmp_path / "m.dmxm"
    write_checkpoint(init_model(ModelConfig(N=3, M=6, P=2, J=2)), q)
    q.write_bytes(q.read_bytes()[:-8])
    with pytest.raises(FormatError):
        read_checkpoint(q)
    # a checkpoint read as a dataset fails on its magic
    write_checkpoint(init_model(ModelConfig(N=3, M=6, P=2, J=2)), q)
    assert q.read_bytes()[:8] == CHECKPOINT_MAGIC
    with pytest.raises(FormatError):
        read_dataset(q)


def test_trajectory_csv_round_trip(tmp_path, rng):
    tr = Trajectory(rng.standard_normal((2, 15)), dt=0.1)
    p = tmp_path / "t.csv"
    write_trajectory_csv(tr, p, names=["a", "b"])
    back = read_trajectory_csv(p, dt=0.1)
    assert np.array_equal(back.data, tr.data) and back.dt == 0.1
    assert p.read_text().splitlines()[0] == "a,b"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(FormatError):
        read_trajectory_csv(p)
    p.write_text("a\nfoo\n")
    with pytest.raises(FormatError):
        read_trajectory_csv(p)


def test_config_round_trip(tmp_path):
    cfg = {"systems": ["lorenz63", "rossler"], "seed": 4, "noise_level": 0.05, "flag": True,
           "skip": None, "model": {"J": 4, "M": 10}}
    p = tmp_path / "c.toml"
    write_config(cfg, p)
    back = read_config(p)
    assert back == {k: v for k, v in cfg.items() if v is not None}
    p.write_text("seed = = 3\n")
    with pytest.raises(ConfigurationError):
        read_config(p)


def test_loss_csv(tmp_path):
    p = tmp_path / "loss.csv"
    write_loss_csv([{"epoch": 0, "mse": 0.5, "reg": 0.01, "lr": 2e-3}], p)
    assert p.read_text() == "epoch,mse,reg,lr\n0,0.5,0.01,0.002\n"
