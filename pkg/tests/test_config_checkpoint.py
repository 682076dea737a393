import json

import pytest
import torch

from ccdehaze.checkpoint import (
    build_models,
    derive_seed,
    load_checkpoint,
    load_networks,
    parameter_checksums,
    read_checkpoint,
    save_checkpoint,
)
from ccdehaze.config import config_from_dict, load_config, save_config
from ccdehaze.errors import CheckpointError, ConfigError
from ccdehaze.report import failed_row, read_report, render_table, write_report


# -- config -------------------------------------------------------------------

def test_presets():
    tiny = config_from_dict({}, "tiny", 0)
    assert (tiny.data.classes, tiny.data.per_class, tiny.train.batch_size, tiny.train.width_scale) == (4, 32, 4, 0.125)
    paper = config_from_dict({}, "paper", 0)
    assert (paper.train.width_scale, paper.train.disc_hidden, paper.train.cnet_backbone) == (1.0, 1024, "resnet50")
    assert paper.train.weights == {"a": 500.0, "b": 1.0, "c": 1.0}
    assert paper.train.learning_rate == 2e-4 and paper.train.adam_betas == [0.5, 0.999]
    assert paper.haze.beta == 2.0


@pytest.mark.parametrize("doc", [
    {"extra": 1},
    {"train": {"lr": 0.1}},
    {"data": {"val_fraction": 1.0}},
    {"haze": {"beta": -1}},
    {"preset": "huge"},
    {"train": {"weights": {"d": 1}}},
    {"train": {"weights": {"a": -1}}},
    {"data": "not an object"},
    {"data": {"image_size": 64}},
])
def test_rejected_documents(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_hash_is_stable_and_sensitive():
    a, b = config_from_dict({}, "tiny", 0), config_from_dict({}, "tiny", 0)
    assert a.config_hash() == b.config_hash()
    assert config_from_dict({}, "tiny", 1).config_hash() != a.config_hash()
    assert a.with_variant("DNet").config_hash() != a.config_hash()
    assert a.train.variant == "DNet+CCGAN+CNet"  # with_variant copies


def test_save_load_round_trip(tmp_path):
    cfg = config_from_dict({"train": {"variant": "DNet+CNet", "epochs": 3}, "seed": 7})
    save_config(tmp_path / "c.json", cfg)
    back = load_config(tmp_path / "c.json")
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert load_config(tmp_path / "c.json", seed=8).seed == 8


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    (tmp_path / "broken.json").write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.json")


# -- checkpoints --------------------------------------------------------------

@pytest.fixture(scope="module")
def cfg():
    return config_from_dict({}, "tiny", 0)


def test_models_are_seeded_per_network(cfg):
    a, b = build_models(cfg, 3), build_models(cfg, 3)
    for (name, ma), (_, mb) in zip(a.items(), b.items()):
        assert parameter_checksums(ma) == parameter_checksums(mb), name
    assert derive_seed(0, "dnet") != derive_seed(0, "cnet")
    assert derive_seed(0, "dnet") == derive_seed(0, "dnet")


def test_checkpoint_round_trip(cfg, tmp_path):
    models = build_models(cfg, 3)
    save_checkpoint(tmp_path / "m.pt", models, cfg, {"counters": {"step": 5}})
    loaded, payload = load_checkpoint(tmp_path / "m.pt")
    assert payload["config_hash"] == cfg.config_hash() and payload["counters"] == {"step": 5}
    for (name, ma), (_, mb) in zip(models.items(), loaded.items()):
        assert parameter_checksums(ma) == parameter_checksums(mb), name
    assert payload["config"] == cfg.to_dict()


def test_checkpoint_shape_mismatch_is_named(cfg, tmp_path):
    save_checkpoint(tmp_path / "m.pt", build_models(cfg, 3), cfg)
    payload = read_checkpoint(tmp_path / "m.pt")
    weight = next(k for k in payload["networks"]["cnet"] if k.endswith("weight"))
    payload["networks"]["cnet"][weight] = torch.zeros(1, 2, 3)
    with pytest.raises(CheckpointError) as exc:
        load_networks(payload)
    assert weight in str(exc.value)
    del payload["networks"]["discriminator"]
    with pytest.raises(CheckpointError):
        load_networks(payload)


def test_unreadable_checkpoints(tmp_path):
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "absent.pt")
    (tmp_path / "junk.pt").write_bytes(b"junk")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "junk.pt")
    torch.save({"format": "other"}, tmp_path / "foreign.pt")
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "foreign.pt")


# -- report -------------------------------------------------------------------

def test_report_round_trip_and_table(tmp_path):
    rows = [
        {"name": "DNet", "status": "ok", "psnr": 21.23456, "ssim": 0.81234, "accuracy": {"CNet": None}},
        {"name": "DNet+CNet", "status": "ok", "psnr": 22.0, "ssim": 0.9, "accuracy": {"CNet": 75.0}},
        failed_row("DNet+CCGAN", "boom", "abc"),
    ]
    jsonl, txt = write_report(tmp_path, rows, {"seed": 0})
    meta, back = read_report(jsonl)
    assert meta["seed"] == 0 and [r["name"] for r in back] == ["DNet", "DNet+CNet", "DNet+CCGAN"]
    table = open(txt).read()
    assert table == render_table(rows)
    lines = table.splitlines()
    assert "| DNet " in lines[3] and "21.2346" in lines[3] and "0.8123" in lines[3] and "| -" in lines[3]
    assert "75.0" in lines[5] and "FAILED" in lines[7]
    assert len({len(line) for line in lines}) == 1
    assert json.loads(open(jsonl).readline())["kind"] == "meta"
