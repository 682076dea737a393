import json

import numpy as np
import pytest
import torch

import ccdehaze.cli as cli
from ccdehaze.checkpoint import build_models, save_checkpoint
from ccdehaze.data import read_manifest
from ccdehaze.images import load_image, save_image
from ccdehaze.report import read_report
from conftest import small_config


def write_config(path, manifest, **train):
    doc = {
        "data": {"classes": 2, "per_class": 10, "train_per_class": 6, "manifest": manifest},
        "train": {"epochs": 1, "batch_size": 2, **train},
    }
    path.write_text(json.dumps(doc))
    return str(path)


def test_synthesize_tiny_preset(tmp_path, capsys):
    assert cli.main(["synthesize", "--preset", "tiny", "--out-dir", str(tmp_path)]) == 0
    manifest = capsys.readouterr().out.strip()
    pairs, meta = read_manifest(manifest)
    assert len(pairs) == 4 * 32
    assert sorted(np.bincount([p.label for p in pairs]).tolist()) == [32] * 4
    assert meta["haze"]["beta"] == 2.0
    assert all(p.haze["beta"] == 2.0 for p in pairs)


def test_out_dir_defaults_to_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CCDEHAZE_OUT", str(tmp_path))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": {"classes": 2, "per_class": 3}}))
    assert cli.main(["synthesize", "--config", str(cfg)]) == 0
    assert (tmp_path / "synthesize" / "manifest.json").exists()


def test_usage_errors_exit_one(tmp_path, small_manifest, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--variant", "CNet"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["explode"])
    assert exc.value.code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochz": 3}}))
    assert cli.main(["train", "--config", str(bad), "--out-dir", str(tmp_path / "x")]) == 1
    assert "epochz" in capsys.readouterr().err


def test_missing_manifest_fails_before_writing(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["train", "--manifest", str(tmp_path / "nope.json"), "--out-dir", str(out)])
    assert code == 2
    assert not out.exists()


def test_train_then_evaluate(tmp_path, small_manifest, capsys):
    config = write_config(tmp_path / "c.json", small_manifest)
    run = tmp_path / "run"
    assert cli.main(["train", "--config", config, "--variant", "DNet+CNet", "--out-dir", str(run)]) == 0
    rows = [json.loads(line) for line in (run / "metrics.jsonl").read_text().splitlines()]
    # 5 train pairs per class after 1 goes to validation; batches of 2
    assert [r["step"] for r in rows] == list(range(5))
    assert {r["variant"] for r in rows} == {"DNet+CNet"}
    capsys.readouterr()
    assert cli.main(["evaluate", "--checkpoint", str(run)]) == 0
    assert capsys.readouterr().out.startswith("psnr ")
    meta, report = read_report(run / "evaluation.jsonl")
    assert [r["name"] for r in report][0] == "DNet+CNet"
    samples = (run / "evaluation_samples.jsonl").read_text().splitlines()
    assert len(samples) == 2 * 4


def test_dehaze_restores_each_input_size(tmp_path, small_manifest):
    cfg = small_config(small_manifest)
    ckpt = str(tmp_path / "m.pt")
    save_checkpoint(ckpt, build_models(cfg, 2), cfg)
    rng = np.random.default_rng(0)
    shapes = [(40, 60), (100, 30), (256, 256)]
    inputs = []
    for i, (h, w) in enumerate(shapes):
        sub = tmp_path / f"in{i}"
        save_image(sub / "img.png", rng.uniform(size=(h, w, 3)))
        inputs.append(str(sub / "img.png"))
    out = tmp_path / "out"
    assert cli.main(["dehaze", "--checkpoint", ckpt, "--out-dir", str(out), *inputs]) == 0
    produced = sorted(out.glob("*.png"))
    assert len(produced) == len(inputs)
    assert [load_image(p).shape[:2] for p in [out / "img.png", out / "img_1.png", out / "img_2.png"]] == shapes


def test_checkpoint_version_mismatch(tmp_path, small_manifest, capsys):
    cfg = small_config(small_manifest)
    ckpt = tmp_path / "m.pt"
    save_checkpoint(str(ckpt), build_models(cfg, 2), cfg)
    payload = torch.load(ckpt, weights_only=False)
    payload["version"] = 99
    torch.save(payload, ckpt)
    save_image(tmp_path / "a.png", np.full((8, 8, 3), 0.5))
    assert cli.main(["dehaze", "--checkpoint", str(ckpt), "--out-dir", str(tmp_path / "o"), str(tmp_path / "a.png")]) == 2
    assert "version 99" in capsys.readouterr().err


def test_ablate_records_a_failed_variant(tmp_path, small_manifest, monkeypatch, capsys):
    real_train = cli.train

    def flaky(cfg, *args, **kwargs):
        if cfg.train.variant == "DNet+CCGAN":
            raise RuntimeError("injected failure")
        return real_train(cfg, *args, **kwargs)

    monkeypatch.setattr(cli, "train", flaky)
    config = write_config(tmp_path / "c.json", small_manifest)
    out = tmp_path / "ablate"
    assert cli.main(["ablate", "--config", config, "--out-dir", str(out)]) == 2
    table = capsys.readouterr().out
    failed_line = next(line for line in table.splitlines() if line.startswith("| DNet+CCGAN "))
    assert "FAILED" in failed_line
    meta, rows = read_report(out / "report.jsonl")
    assert [r["name"] for r in rows] == ["DNet", "DNet+CCGAN", "DNet+CNet", "DNet+CCGAN+CNet"]
    failed = [r for r in rows if r.get("status") == "failed"]
    assert [r["name"] for r in failed] == ["DNet+CCGAN"]
    assert "injected failure" in failed[0]["error"]
    assert meta["hazy_baseline"] is not None


@pytest.mark.slow
def test_identity_model_leaves_haze_free_input_alone(identity_checkpoint, tmp_path):
    path, split = identity_checkpoint
    # a clear image is a zero-haze input
    sources = [p.clear_path for p in sorted(split.test, key=lambda p: p.identity_key)[:4]]
    out = tmp_path / "out"
    assert cli.main(["dehaze", "--checkpoint", path, "--out-dir", str(out), *sources]) == 0
    for src, dst in zip(sources, cli.cmd_dehaze(path, sources, str(tmp_path / "again"))):
        mae = np.abs(load_image(dst) - load_image(src)).mean()
        assert mae < 0.05, (src, mae)
