"""Command-line entry point: ``ccdehaze {synthesize,train,dehaze,evaluate,ablate}``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure. The
default output root is ``$CCDEHAZE_OUT/<verb>`` (else ``./runs/<verb>``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import torch

from .checkpoint import load_checkpoint
from .config import OUT_ENV, PRESETS, VARIANTS, ExperimentConfig, config_from_dict, load_config
from .data import (
    ImageCache,
    LabeledImage,
    build_split,
    enforce_pairing,
    load_split,
    read_manifest,
    scan_class_folders,
)
from .errors import ConfigError, DatasetError, DehazeError
from .evalharness import ExternalClassifier, evaluate
from .images import load_image, resize_image, save_image, to_tensor
from .report import evaluation_row, failed_row, file_digest, hazy_row, write_report
from .scattering import synthesize_pairs
from .shapes import make_shapes_dataset
from .trainer import train

log = logging.getLogger("ccdehaze")


def cmd_synthesize(cfg: ExperimentConfig, out_dir) -> str:
    """Build the clear source set and its hazy twins; returns the manifest path."""
    source = cfg.data.source
    if not source:
        raise ConfigError("data.source must name 'tiny' or a directory of class folders")
    if source == "tiny":
        items, names = make_shapes_dataset(
            os.path.join(out_dir, "clear"), cfg.data.classes, cfg.data.per_class, cfg.data.image_size, cfg.seed
        )
    else:
        items, names = scan_class_folders(source)
    synthesize_pairs(items, cfg.haze.params(cfg.seed), out_dir, names)
    return os.path.join(out_dir, "manifest.json")


def load_dataset(cfg: ExperimentConfig):
    """Read the manifest, split the clear sources, and let hazy pairs inherit partitions."""
    if not cfg.data.manifest:
        raise DatasetError("data.manifest is not set")
    pairs, meta = read_manifest(cfg.data.manifest)
    sources = [LabeledImage(p.identity_key, p.clear_path, p.label, p.subset) for p in pairs]
    split = build_split(sources, cfg.data.val_fraction, cfg.seed, cfg.data.train_per_class)
    paired = enforce_pairing(split, pairs)
    names = meta.get("class_names")
    num_classes = len(names) if names else max(p.label for p in pairs) + 1
    return paired, num_classes, pairs


def cmd_train(cfg: ExperimentConfig, out_dir):
    split, num_classes, _ = load_dataset(cfg)
    return train(cfg, split, out_dir, num_classes)


def _externals(cfg: ExperimentConfig):
    return [ExternalClassifier(name, cmd) for name, cmd in sorted(cfg.eval.external_classifiers.items())]


def _run_checkpoint(run_dir) -> str:
    return os.path.join(run_dir, "best.pt") if os.path.isdir(run_dir) else run_dir


def cmd_evaluate(run_dir, out_dir=None):
    """Evaluate a training run directory on its own test partition."""
    if not os.path.isdir(run_dir):
        raise DatasetError(f"run directory not found: {run_dir}")
    out_dir = out_dir or run_dir
    cfg = load_config(os.path.join(run_dir, "config.json"))
    pairs, _ = read_manifest(cfg.data.manifest)
    split = load_split(os.path.join(run_dir, "split.json"), pairs)
    ckpt = _run_checkpoint(run_dir)
    run = evaluate(
        ckpt,
        split.test,
        batch_size=cfg.eval.batch_size,
        external=_externals(cfg),
        work_dir=os.path.join(out_dir, "eval_images"),
    )
    rows = [evaluation_row(cfg.train.variant, run, ckpt, cfg.config_hash(), out_dir), hazy_row(run)]
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "dataset": file_digest(cfg.data.manifest)}
    write_report(out_dir, rows, meta, stem="evaluation")
    with open(os.path.join(out_dir, "evaluation_samples.jsonl"), "w") as f:
        for r in run.records:
            f.write(json.dumps(vars(r), sort_keys=True) + "\n")
    return run


@torch.no_grad()
def cmd_dehaze(checkpoint, inputs, out_dir) -> list[str]:
    """Dehaze arbitrary images: resize to the network size, run, resize back to the source size."""
    models, _ = load_checkpoint(_run_checkpoint(checkpoint))
    models.eval()
    size = models.dnet.config.input_size
    outputs, used = [], set()
    for path in inputs:
        image = load_image(path)
        h, w = image.shape[:2]
        out = models.dnet(to_tensor(resize_image(image, size, size)))[0]
        restored = resize_image(out.permute(1, 2, 0).double().numpy(), h, w)
        stem = os.path.splitext(os.path.basename(path))[0]
        name, k = stem, 1
        while name in used:
            name, k = f"{stem}_{k}", k + 1
        used.add(name)
        dest = os.path.join(out_dir, name + ".png")
        save_image(dest, restored)
        outputs.append(dest)
    return outputs


def cmd_ablate(cfg: ExperimentConfig, out_dir) -> tuple[list[dict], bool]:
    """Train and evaluate all four variants with one shared seed and split."""
    split, num_classes, _ = load_dataset(cfg)
    cache = ImageCache(cfg.data.image_size)
    rows, hazy, ok = [], None, True
    for variant in VARIANTS:
        vcfg = cfg.with_variant(variant)
        run_dir = os.path.join(out_dir, variant)
        try:
            result = train(vcfg, split, run_dir, num_classes, cache)
            run = evaluate(result.best_path, split.test, batch_size=cfg.eval.batch_size, cache=cache,
                           external=_externals(cfg), work_dir=os.path.join(run_dir, "eval_images"))
            rows.append(evaluation_row(variant, run, result.best_path, vcfg.config_hash(), out_dir))
            hazy = hazy or hazy_row(run)
        except Exception as exc:  # a failed variant must not sink the others
            log.exception("variant %s failed", variant)
            rows.append(failed_row(variant, f"{type(exc).__name__}: {exc}", vcfg.config_hash()))
            ok = False
    meta = {
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "dataset": file_digest(cfg.data.manifest),
        "split_sizes": split.sizes(),
        "batch_size": cfg.train.batch_size,
        "hazy_baseline": hazy,
    }
    write_report(out_dir, rows, meta)
    return rows, ok


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help=f"output directory (default ${OUT_ENV}/<verb>)")
    common.add_argument("--preset", choices=PRESETS, help="defaults to layer the config over")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ccdehaze", description="Classification-driven single image dehazing")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    sub.add_parser("synthesize", parents=[common], help="generate hazy/clear pairs and a manifest")
    p = sub.add_parser("train", parents=[common], help="train one variant")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--manifest", help="override data.manifest")
    p = sub.add_parser("dehaze", parents=[common], help="dehaze image files with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="run directory or .pt file")
    p.add_argument("inputs", nargs="+")
    p = sub.add_parser("evaluate", parents=[common], help="score a run on its test partition")
    p.add_argument("--checkpoint", required=True, help="run directory")
    p = sub.add_parser("ablate", parents=[common], help="train + evaluate all four variants")
    p.add_argument("--manifest", help="override data.manifest")
    return parser


def _load_cfg(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config, args.preset, args.seed)
    else:
        cfg = config_from_dict({}, args.preset, args.seed)
    if getattr(args, "manifest", None):
        cfg.data.manifest = args.manifest
    if getattr(args, "variant", None):
        cfg = cfg.with_variant(args.variant)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out_dir = args.out_dir or os.path.join(os.environ.get(OUT_ENV, "runs"), args.verb)
    try:
        if args.verb == "synthesize":
            print(cmd_synthesize(_load_cfg(args), out_dir))
        elif args.verb == "train":
            result = cmd_train(_load_cfg(args), out_dir)
            print(result.best_path)
        elif args.verb == "dehaze":
            for path in cmd_dehaze(args.checkpoint, args.inputs, out_dir):
                print(path)
        elif args.verb == "evaluate":
            run = cmd_evaluate(args.checkpoint, args.out_dir)
            print(f"psnr {run.dehazed.psnr:.4f} ssim {run.dehazed.ssim:.4f} (hazy {run.hazy.psnr:.4f} / {run.hazy.ssim:.4f})")
        elif args.verb == "ablate":
            rows, ok = cmd_ablate(_load_cfg(args), out_dir)
            with open(os.path.join(out_dir, "report.txt")) as f:
                print(f.read(), end="")
            return 0 if ok else 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DehazeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
