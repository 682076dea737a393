"""Joint training of DNet, the feature-level GAN and CNet.

Each step first takes one Adam ascent step for the discriminator on
log D(real features) + log(1 - D(fake features)), then one Adam descent step
on a*MSE + b*GAN + c*CE for the generator side (DNet, plus the feature
extractor and/or CNet when the variant includes them).

Checkpoint directory layout::

    config.json       experiment config snapshot
    split.json        identity_key -> partition
    last.pt           full training state (networks, optimizers, counters, rng)
    best.pt           networks with the best validation PSNR so far
    metrics.jsonl     one loss record per step (append-only)
    validation.jsonl  one record per epoch
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .ccgan import discriminator_objective, generator_gan_loss
from .checkpoint import Models, build_models, load_networks, read_checkpoint, save_checkpoint
from .cnet import softmax
from .config import ExperimentConfig, TrainConfig, save_config
from .data import DatasetSplit, ImageCache, batch_iterator, save_split
from .errors import CheckpointError, DatasetError, NumericError
from .metrics import psnr
from .objective import LossBreakdown, ce_loss, mse_loss, total_loss

log = logging.getLogger(__name__)

MIN_BATCH = 2


@dataclass
class TrainState:
    models: Models
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int = 0
    best_psnr: float = -math.inf
    best_ce: float = math.inf
    best_step: int = -1

    def counters(self) -> dict:
        return {"step": self.step, "best_psnr": self.best_psnr, "best_ce": self.best_ce, "best_step": self.best_step}


@dataclass
class TrainResult:
    out_dir: str
    best_path: str
    last_path: str
    metrics_path: str
    state: TrainState
    records: list = field(default_factory=list)


def generator_side_params(models: Models, tcfg: TrainConfig) -> list:
    params = list(models.dnet.parameters())
    if tcfg.uses_gan:
        params += list(models.extractor.parameters())
    if tcfg.uses_cnet:
        params += list(models.cnet.parameters())
    return params


def init_state(models: Models, tcfg: TrainConfig) -> TrainState:
    betas = tuple(tcfg.adam_betas)
    opt_g = torch.optim.Adam(generator_side_params(models, tcfg), lr=tcfg.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(models.discriminator.parameters(), lr=tcfg.learning_rate, betas=betas)
    return TrainState(models=models, opt_g=opt_g, opt_d=opt_d)


def train_step(
    state: TrainState,
    batch,
    tcfg: TrainConfig,
    probe: Callable[[str], None] | None = None,
) -> tuple[LossBreakdown, float | None]:
    """One alternating update on ``batch = (hazy, clear, labels, keys)``.

    Returns the generator-side loss breakdown and the discriminator objective
    (``None`` when the variant has no GAN). ``probe`` is called with
    ``"discriminator"`` and ``"generator"`` right after each update.
    """
    hazy, clear, labels, keys = batch
    if hazy.shape[0] < MIN_BATCH:
        raise DatasetError(f"batch size {hazy.shape[0]} < {MIN_BATCH}")
    m = state.models
    weights = tcfg.effective_weights()
    m.dnet.train()
    dehazed = m.dnet(hazy)

    d_obj = None
    if tcfg.uses_gan:
        m.extractor.train()
        m.discriminator.train()
        real_feat = m.extractor(clear)
        fake_feat = m.extractor(dehazed)
        m.discriminator.requires_grad_(True)
        state.opt_d.zero_grad(set_to_none=True)
        objective = discriminator_objective(m.discriminator(real_feat.detach()), m.discriminator(fake_feat.detach()))
        if not torch.isfinite(objective):
            raise NumericError(f"discriminator objective is {float(objective.detach())}; batch {keys}", keys)
        (-objective).backward()
        state.opt_d.step()
        d_obj = float(objective.detach())
        if probe:
            probe("discriminator")

    state.opt_g.zero_grad(set_to_none=True)
    mse = mse_loss(dehazed, clear)
    gan = 0.0
    if tcfg.uses_gan:
        m.discriminator.requires_grad_(False)
        gan = generator_gan_loss(m.discriminator(fake_feat), tcfg.non_saturating_gan)
    ce = 0.0
    if tcfg.uses_cnet:
        m.cnet.train()
        ce = ce_loss(softmax(m.cnet(dehazed)), labels)
    try:
        total, breakdown = total_loss(mse, gan, ce, weights)
    except NumericError as exc:
        raise NumericError(f"{exc}; batch {keys}", keys) from exc
    total.backward()
    state.opt_g.step()
    m.discriminator.requires_grad_(True)
    state.step += 1
    if probe:
        probe("generator")
    return breakdown, d_obj


def usable_batches(n: int, batch_size: int) -> int:
    """Batches per epoch once a trailing batch smaller than MIN_BATCH is dropped."""
    full, rem = divmod(n, batch_size)
    return full + (1 if rem >= MIN_BATCH else 0)


@torch.no_grad()
def validate(models: Models, pairs, cache: ImageCache, tcfg: TrainConfig, batch_size: int = 8) -> dict:
    models.dnet.eval()
    models.cnet.eval()
    scores, ce_sum = [], 0.0
    for start in range(0, len(pairs), batch_size):
        hazy, clear, labels, _ = cache.batch(pairs[start:start + batch_size])
        out = models.dnet(hazy)
        for o, c in zip(out, clear):
            scores.append(psnr(o.permute(1, 2, 0).double().numpy(), c.permute(1, 2, 0).double().numpy()))
        if tcfg.uses_cnet:
            ce_sum += float(ce_loss(softmax(models.cnet(out)), labels)) * len(labels)
    models.dnet.train()
    models.cnet.train()
    return {"psnr": float(np.mean(scores)), "ce": ce_sum / len(pairs) if tcfg.uses_cnet else None}


def _state_payload(state: TrainState) -> dict:
    return {
        "optimizers": {"g": state.opt_g.state_dict(), "d": state.opt_d.state_dict()},
        "counters": state.counters(),
        "torch_rng": torch.get_rng_state(),
    }


def _restore(state: TrainState, payload: dict) -> None:
    load_networks(payload, state.models)
    state.opt_g.load_state_dict(payload["optimizers"]["g"])
    state.opt_d.load_state_dict(payload["optimizers"]["d"])
    c = payload["counters"]
    state.step, state.best_psnr, state.best_ce, state.best_step = c["step"], c["best_psnr"], c["best_ce"], c["best_step"]
    torch.set_rng_state(payload["torch_rng"])


def _truncate_log(path, upto_step: int) -> None:
    if not os.path.exists(path):
        return
    with open(path) as f:
        rows = [line for line in f if line.strip() and json.loads(line)["step"] < upto_step]
    with open(path, "w") as f:
        f.writelines(rows)


def _append(path, record: dict) -> None:
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def train(
    cfg: ExperimentConfig,
    split: DatasetSplit,
    out_dir,
    num_classes: int,
    cache: ImageCache | None = None,
    resume: bool = True,
    stop_after: int | None = None,
    probe: Callable[[TrainState, str], None] | None = None,
) -> TrainResult:
    """Train for ``cfg.train.epochs`` epochs (or ``max_steps``) and keep the best-validation networks.

    With ``resume`` and an existing ``last.pt`` from the same config, training
    continues exactly where it stopped. ``stop_after`` ends the run early after
    that many total steps, simulating an interruption.
    """
    tcfg = cfg.train
    tcfg.validate()
    if not split.train:
        raise DatasetError("training partition is empty")
    n_batches = usable_batches(len(split.train), tcfg.batch_size)
    if n_batches == 0:
        raise DatasetError(f"{len(split.train)} training items cannot fill a batch of {MIN_BATCH}")
    total_steps = tcfg.epochs * n_batches
    if tcfg.max_steps is not None:
        total_steps = min(total_steps, tcfg.max_steps)

    cache = cache or ImageCache(cfg.data.image_size)
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in ("config.json", "split.json", "last.pt", "best.pt", "metrics.jsonl", "validation.jsonl")}

    state = init_state(build_models(cfg, num_classes), tcfg)
    if resume and os.path.exists(paths["last.pt"]):
        payload = read_checkpoint(paths["last.pt"])
        if payload["config_hash"] != cfg.config_hash():
            raise CheckpointError(f"{paths['last.pt']} was written by a different config; refusing to resume")
        _restore(state, payload)
        log.info("resuming at step %d", state.step)
    else:
        for key in ("metrics.jsonl", "validation.jsonl", "best.pt"):
            if os.path.exists(paths[key]):
                os.remove(paths[key])
    _truncate_log(paths["metrics.jsonl"], state.step)
    _truncate_log(paths["validation.jsonl"], state.step + 1)
    save_config(paths["config.json"], cfg)
    save_split(paths["split.json"], split, {"seed": cfg.seed, "val_fraction": cfg.data.val_fraction})

    weights = tcfg.effective_weights()
    step_probe = (lambda phase: probe(state, phase)) if probe else None
    records = []
    while state.step < total_steps:
        epoch, skip = divmod(state.step, n_batches)
        batches = [b for b in batch_iterator(split.train, tcfg.batch_size, cfg.seed, epoch) if len(b) >= MIN_BATCH]
        for pairs in batches[skip:]:
            batch = cache.batch(pairs)
            breakdown, d_obj = train_step(state, batch, tcfg, step_probe)
            record = {
                "step": state.step - 1,
                "epoch": epoch,
                "variant": tcfg.variant,
                "mse": breakdown.mse,
                "gan": breakdown.gan,
                "ce": breakdown.ce,
                "total": breakdown.total,
                "d_objective": d_obj,
                "weights": weights.to_dict(),
            }
            _append(paths["metrics.jsonl"], record)
            records.append(record)

            epoch_done = state.step % n_batches == 0
            finished = state.step >= total_steps
            if epoch_done or finished:
                _end_of_epoch(state, cfg, split, cache, paths, epoch)
            if epoch_done or finished or (tcfg.checkpoint_every and state.step % tcfg.checkpoint_every == 0):
                save_checkpoint(paths["last.pt"], state.models, cfg, _state_payload(state))
            if finished or (stop_after is not None and state.step >= stop_after):
                break
        if stop_after is not None and state.step >= stop_after:
            break

    return TrainResult(out_dir, paths["best.pt"], paths["last.pt"], paths["metrics.jsonl"], state, records)


def _end_of_epoch(state, cfg, split, cache, paths, epoch) -> None:
    if split.validation:
        val = validate(state.models, split.validation, cache, cfg.train, cfg.eval.batch_size)
    else:
        val = {"psnr": None, "ce": None}
    better = (
        val["psnr"] is None
        or val["psnr"] > state.best_psnr
        or (val["psnr"] == state.best_psnr and (val["ce"] or 0.0) < state.best_ce)
    )
    if better:
        state.best_psnr = val["psnr"] if val["psnr"] is not None else -math.inf
        state.best_ce = val["ce"] if val["ce"] is not None else math.inf
        state.best_step = state.step
        save_checkpoint(paths["best.pt"], state.models, cfg, {"counters": state.counters()})
    _append(paths["validation.jsonl"], {"step": state.step, "epoch": epoch, "psnr": val["psnr"], "ce": val["ce"], "best": better})
    log.info("epoch %d step %d val psnr %s", epoch, state.step, val["psnr"])


def run_overfit(cfg: ExperimentConfig, batch, num_classes: int, steps: int) -> list[LossBreakdown]:
    """Repeat train_step on one fixed batch; used to sanity-check the optimization path."""
    state = init_state(build_models(cfg, num_classes), cfg.train)
    return [train_step(state, batch, cfg.train)[0] for _ in range(steps)]

