import json

import numpy as np
import pytest

from livr_lab.checkpoint import (CheckpointError, VocabMismatchError, load_checkpoint,
                                 read_checkpoint, save_checkpoint)
from livr_lab.config import ConfigError, RunConfig, apply_overrides, load_config, parse_value, resolve
from livr_lab.vocab import build_vocab

from conftest import perturb_adapters, tiny_model


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    model = tiny_model(K=3)
    perturb_adapters(model, np.random.default_rng(0))
    path = save_checkpoint(tmp_path / "m.ckpt", model, {"note": "x"})
    back = load_checkpoint(path)
    assert back.config == model.config and back.trainable == model.trainable
    for k, p in model.params.items():
        assert back.params[k].data.tobytes() == p.data.tobytes()
    header, arrays = read_checkpoint(path)
    assert header["meta"] == {"note": "x"} and set(arrays) == set(model.params)
    assert not (tmp_path / "m.ckpt.tmp").exists()


def test_checkpoint_rejects_other_vocabulary(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", tiny_model(K=3))
    load_checkpoint(path, vocab=build_vocab(K=3))
    with pytest.raises(VocabMismatchError):
        load_checkpoint(path, vocab=build_vocab(K=4))


def test_checkpoint_rejects_corrupt_files(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        read_checkpoint(bad)
    path = save_checkpoint(tmp_path / "m.ckpt", tiny_model())
    data = path.read_bytes()
    (tmp_path / "short.ckpt").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "short.ckpt")


def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig().validate()
    assert cfg.resolved_selection == "best_validation"
    assert RunConfig(tasks=("counting", "jigsaw")).resolved_selection == "final"
    cfg.write(tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back == cfg and back.config_hash() == cfg.config_hash()


def test_hash_ignores_locations_but_not_settings():
    a = RunConfig()
    assert RunConfig(out_dir="elsewhere", data_dir="d2").config_hash() == a.config_hash()
    assert a.with_seed(1).config_hash() != a.config_hash()


def test_precedence_flags_over_file_over_defaults(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"optimizer": {"lr": 0.01}, "n_train": 50}))
    cfg = load_config(tmp_path / "c.json", ["optimizer.lr=0.002", "model.latent.K=8"], seed=5)
    assert cfg.optimizer.lr == 0.002 and cfg.n_train == 50 and cfg.model.latent.K == 8
    assert cfg.seed == 5 and cfg.optimizer.batch_size == RunConfig().optimizer.batch_size


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    for overrides in (["novalue"], ["nosuch=1"], ["model.nosuch=1"], ["method=magic"],
                      ["method=direct_sft"], ["tasks=[\"mazes\"]"], ["schedule=[0,0]"]):
        with pytest.raises(ConfigError):
            load_config(None, overrides)
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"colour": "blue"})


def test_baseline_configs_validate():
    d = RunConfig().to_dict()
    ok = apply_overrides(d, ["method=image_twice", "image_copies=2", "model.latent.K=0"])
    assert RunConfig.from_dict(ok).method == "image_twice"
    with pytest.raises(ConfigError):
        RunConfig.from_dict(apply_overrides(d, ["method=image_twice", "model.latent.K=0"]))


def test_parse_value_and_resolve(monkeypatch, tmp_path):
    assert parse_value("3") == 3 and parse_value("[1, 2]") == [1, 2] and parse_value("abc") == "abc"
    monkeypatch.setenv("LIVR_OUT", str(tmp_path))
    assert resolve("x/y") == tmp_path / "x" / "y"
    assert resolve(tmp_path / "abs") == tmp_path / "abs"
