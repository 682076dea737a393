"""Test-set evaluation: dehaze every hazy test image and score it.

External classifiers speak a line protocol: the command receives image paths
on stdin, one per line, and must print one integer label per line on stdout,
in the same order.
"""
from __future__ import annotations

import logging
import os
import subprocess
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Models, load_checkpoint
from .data import ImageCache, PairedSample
from .errors import DatasetError, DehazeError, ShapeError
from .images import save_image
from .metrics import MetricReport, psnr, ssim, top1_accuracy

log = logging.getLogger(__name__)


@dataclass
class SampleRecord:
    identity_key: str
    label: int
    psnr: float
    ssim: float
    hazy_psnr: float
    hazy_ssim: float
    prediction: int | None = None
    hazy_prediction: int | None = None
    external: dict = field(default_factory=dict)


@dataclass
class EvaluationRun:
    checkpoint: str | None
    test_size: int
    records: list[SampleRecord]
    failed: list[tuple[str, str]]
    dehazed: MetricReport
    hazy: MetricReport
    external_accuracy: dict = field(default_factory=dict)

    def accuracy_columns(self, which: str = "dehazed") -> dict:
        report = self.dehazed if which == "dehazed" else self.hazy
        cols = {"CNet": report.accuracy}
        for name, acc in self.external_accuracy.items():
            cols[name] = acc[which]
        return cols


class ExternalClassifier:
    def __init__(self, name: str, command: str, timeout: float | None = 600):
        self.name = name
        self.command = command
        self.timeout = timeout

    def __call__(self, paths: Sequence[str]) -> list[int]:
        proc = subprocess.run(
            self.command,
            shell=True,
            input="".join(f"{p}\n" for p in paths),
            capture_output=True,
            text=True,
            timeout=self.timeout,
        )
        if proc.returncode != 0:
            raise DehazeError(f"external classifier {self.name!r} exited {proc.returncode}: {proc.stderr.strip()}")
        lines = [line for line in proc.stdout.splitlines() if line.strip()]
        if len(lines) != len(paths):
            raise DehazeError(f"external classifier {self.name!r} returned {len(lines)} labels for {len(paths)} images")
        return [int(line) for line in lines]


def _aggregate(records: list[SampleRecord], hazy: bool, with_cnet: bool) -> MetricReport:
    if hazy:
        p, s, preds = [r.hazy_psnr for r in records], [r.hazy_ssim for r in records], [r.hazy_prediction for r in records]
    else:
        p, s, preds = [r.psnr for r in records], [r.ssim for r in records], [r.prediction for r in records]
    acc = top1_accuracy(preds, [r.label for r in records]) if with_cnet else None
    return MetricReport(psnr=float(np.mean(p)), ssim=float(np.mean(s)), accuracy=acc, sample_count=len(records))


@torch.no_grad()
def evaluate(
    checkpoint: str | Models,
    test: Sequence[PairedSample],
    with_cnet: bool | None = None,
    batch_size: int = 8,
    cache: ImageCache | None = None,
    external: Sequence[ExternalClassifier] = (),
    work_dir: str | None = None,
    image_size: int | None = None,
) -> EvaluationRun:
    """Score the dehazer on ``test`` against clear ground truth at the network resolution.

    Also scores the untouched hazy inputs as a baseline. CNet accuracy is
    reported only when the checkpoint's variant trained CNet (or
    ``with_cnet`` says so). Samples that fail to load are listed in
    ``failed`` and left out of the aggregates.
    """
    if not test:
        raise DatasetError("test partition is empty")
    ckpt_path = None
    if isinstance(checkpoint, Models):
        models = checkpoint
    else:
        ckpt_path = os.fspath(checkpoint)
        models, payload = load_checkpoint(ckpt_path)
        if with_cnet is None:
            with_cnet = "CNet" in payload["config"]["train"]["variant"]
    with_cnet = bool(with_cnet)
    models.eval()
    size = image_size or models.dnet.config.input_size
    cache = cache or ImageCache(size)
    if external and work_dir is None:
        raise ValueError("external classifiers need a work_dir for the image files")

    records, failed, loaded = [], [], []
    for pair in sorted(test, key=lambda p: p.identity_key):
        try:
            cache.get(pair)
            loaded.append(pair)
        except (OSError, ValueError, ShapeError) as exc:
            log.warning("evaluation: cannot load %s (%s)", pair.identity_key, exc)
            failed.append((pair.identity_key, str(exc)))

    files = {"dehazed": [], "hazy": []}
    for start in range(0, len(loaded), batch_size):
        chunk = loaded[start:start + batch_size]
        hazy, clear, labels, keys = cache.batch(chunk)
        out = models.dnet(hazy)
        preds = hazy_preds = [None] * len(chunk)
        if with_cnet:
            preds = models.cnet(out).argmax(1).tolist()
            hazy_preds = models.cnet(hazy).argmax(1).tolist()
        for i, key in enumerate(keys):
            o = out[i].permute(1, 2, 0).double().numpy()
            h = hazy[i].permute(1, 2, 0).double().numpy()
            c = clear[i].permute(1, 2, 0).double().numpy()
            records.append(SampleRecord(
                identity_key=key,
                label=int(labels[i]),
                psnr=psnr(o, c),
                ssim=ssim(o, c),
                hazy_psnr=psnr(h, c),
                hazy_ssim=ssim(h, c),
                prediction=preds[i],
                hazy_prediction=hazy_preds[i],
            ))
            if external:
                for kind, img in (("dehazed", o), ("hazy", h)):
                    path = os.path.join(work_dir, kind, key + ".png")
                    save_image(path, img)
                    files[kind].append(path)

    if not records:
        raise DatasetError("no test sample could be evaluated")
    ext_acc = {}
    truths = [r.label for r in records]
    for clf in external:
        dehazed_preds, hazy_preds = clf(files["dehazed"]), clf(files["hazy"])
        for r, dp, hp in zip(records, dehazed_preds, hazy_preds):
            r.external[clf.name] = {"dehazed": dp, "hazy": hp}
        ext_acc[clf.name] = {"dehazed": top1_accuracy(dehazed_preds, truths), "hazy": top1_accuracy(hazy_preds, truths)}

    return EvaluationRun(
        checkpoint=ckpt_path,
        test_size=len(test),
        records=records,
        failed=failed,
        dehazed=_aggregate(records, False, with_cnet),
        hazy=_aggregate(records, True, with_cnet),
        external_accuracy=ext_acc,
    )
