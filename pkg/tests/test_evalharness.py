import sys

import numpy as np
import pytest

from ccdehaze.checkpoint import build_models, save_checkpoint
from ccdehaze.cli import load_dataset
from ccdehaze.data import PairedSample
from ccdehaze.errors import DatasetError, DehazeError
from ccdehaze.evalharness import ExternalClassifier, evaluate
from ccdehaze.metrics import top1_accuracy
from conftest import small_config


@pytest.fixture(scope="module")
def small_setup(small_manifest, tmp_path_factory):
    cfg = small_config(small_manifest)
    split, n_classes, _ = load_dataset(cfg)
    out = tmp_path_factory.mktemp("eval")
    paths = {}
    for variant in ("DNet", "DNet+CNet"):
        path = str(out / f"{variant}.pt")
        save_checkpoint(path, build_models(cfg.with_variant(variant), n_classes), cfg.with_variant(variant))
        paths[variant] = path
    return cfg, split, paths


def test_empty_test_set(small_setup):
    _, _, paths = small_setup
    with pytest.raises(DatasetError):
        evaluate(paths["DNet"], [])


def test_aggregates_are_per_sample_means(small_setup):
    _, split, paths = small_setup
    run = evaluate(paths["DNet+CNet"], split.test)
    assert len(run.records) == run.dehazed.sample_count == len(split.test)
    assert run.dehazed.psnr == pytest.approx(np.mean([r.psnr for r in run.records]), abs=1e-12)
    assert run.dehazed.ssim == pytest.approx(np.mean([r.ssim for r in run.records]), abs=1e-12)
    assert run.hazy.psnr == pytest.approx(np.mean([r.hazy_psnr for r in run.records]), abs=1e-12)
    labels = [r.label for r in run.records]
    assert run.dehazed.accuracy == top1_accuracy([r.prediction for r in run.records], labels)
    assert run.hazy.accuracy == top1_accuracy([r.hazy_prediction for r in run.records], labels)


def test_cnet_accuracy_only_for_variants_that_train_it(small_setup):
    _, split, paths = small_setup
    run = evaluate(paths["DNet"], split.test)
    assert run.dehazed.accuracy is None and run.hazy.accuracy is None
    assert all(r.prediction is None for r in run.records)
    assert evaluate(paths["DNet+CNet"], split.test).dehazed.accuracy is not None


def test_order_does_not_matter(small_setup):
    _, split, paths = small_setup
    a = evaluate(paths["DNet+CNet"], split.test)
    b = evaluate(paths["DNet+CNet"], list(reversed(split.test)))
    assert (a.dehazed, a.hazy) == (b.dehazed, b.hazy)


def test_unreadable_sample_is_recorded_and_excluded(small_setup, tmp_path):
    _, split, paths = small_setup
    ghost = PairedSample("zz/ghost", None, None, 0, str(tmp_path / "gone.png"), str(tmp_path / "gone_too.png"))
    run = evaluate(paths["DNet"], split.test + [ghost])
    assert [k for k, _ in run.failed] == ["zz/ghost"]
    assert len(run.records) + len(run.failed) == run.test_size == len(split.test) + 1
    clean = evaluate(paths["DNet"], split.test)
    assert run.dehazed == clean.dehazed


def test_external_classifier_protocol(small_setup, tmp_path):
    _, split, paths = small_setup
    # answers class 0 for every path it reads on stdin
    command = f"{sys.executable} -c \"import sys; [print(0) for _ in sys.stdin]\""
    run = evaluate(paths["DNet"], split.test, external=[ExternalClassifier("zeros", command)], work_dir=str(tmp_path))
    expected = top1_accuracy([0] * len(run.records), [r.label for r in run.records])
    assert run.external_accuracy["zeros"] == {"dehazed": expected, "hazy": expected}
    assert run.accuracy_columns()["zeros"] == expected and run.accuracy_columns()["CNet"] is None
    assert len(list((tmp_path / "dehazed").rglob("*.png"))) == len(split.test)


def test_external_classifier_failures(small_setup, tmp_path):
    _, split, paths = small_setup
    with pytest.raises(DehazeError):
        evaluate(paths["DNet"], split.test, external=[ExternalClassifier("bad", "exit 3")], work_dir=str(tmp_path))
    with pytest.raises(DehazeError):
        evaluate(paths["DNet"], split.test, external=[ExternalClassifier("short", "echo 0")], work_dir=str(tmp_path))


@pytest.mark.slow
def test_identity_dehazer_matches_hazy_baseline(identity_checkpoint):
    path, split = identity_checkpoint
    run = evaluate(path, split.test)
    assert abs(run.dehazed.psnr - run.hazy.psnr) < 0.1, (run.dehazed.psnr, run.hazy.psnr)
