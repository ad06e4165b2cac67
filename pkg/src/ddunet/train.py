"""Training loop: Adam with weight decay, per-step poly schedule, focal loss.

Every optimisation step appends one JSON line to ``train_log.jsonl``; each
epoch ends with a validation pass and writes ``last.ckpt`` (plus ``best.ckpt``
when validation mIoU improves) and ``weights.ddw``.
"""

import json
import logging
import math
import os
import random
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import check_model_compatible, load_checkpoint, model_from_config, save_checkpoint, save_weights
from .data import DatasetIndex, SegmentationDataset, build_dataset_index
from .encoder import load_pretrained
from .evaluate import Predictor, evaluate_samples
from .losses import focal_loss_with_logits
from .synthetic import synth_dataset

log = logging.getLogger(__name__)

__all__ = ["poly_lr", "make_optimizer", "resolve_dataset", "set_determinism", "build_model", "train", "TrainResult"]

DETERMINISTIC_ENV = "DDUNET_DETERMINISTIC"


def poly_lr(step, total_steps, lr0, power=0.9):
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if step < 0:
        raise ValueError("step must be non-negative")
    if step > total_steps:
        warnings.warn(f"step {step} is past the end of the schedule ({total_steps}); learning rate clamped to 0")
        return 0.0
    return lr0 * (1.0 - step / total_steps) ** power


def make_optimizer(params, cfg):
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    if cfg.decoupled_weight_decay:
        return torch.optim.AdamW(params, lr=cfg.initial_lr, betas=betas, eps=cfg.adam_eps, weight_decay=cfg.weight_decay)
    return torch.optim.Adam(params, lr=cfg.initial_lr, betas=betas, eps=cfg.adam_eps, weight_decay=cfg.weight_decay)


def set_determinism(cfg):
    random.seed(cfg.seed)
    np.random.seed(cfg.seed % 2**32)
    torch.manual_seed(cfg.seed)
    if cfg.deterministic or os.environ.get(DETERMINISTIC_ENV) == "1":
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False


def resolve_dataset(cfg, split, cache_dir=None):
    """Items for one split: Samples for the synthetic dataset, TileSpecs otherwise."""
    if cfg.dataset == "synthetic":
        n = {"train": cfg.synthetic_train, "val": cfg.synthetic_val, "test": cfg.synthetic_test}[split]
        offset = {"train": 0, "val": 1, "test": 2}[split]
        return synth_dataset(n, seed=cfg.synthetic_seed * 3 + offset, size=cfg.synthetic_size)
    cache = Path(cache_dir) / f"index_{cfg.tile_size}_{cfg.stride}.jsonl" if cache_dir else None
    if cache is not None and cache.exists():
        index = DatasetIndex.load_jsonl(cache)
    else:
        index = build_dataset_index(cfg.dataset, cfg.tile_size, cfg.stride)
        if cache is not None:
            cache.parent.mkdir(parents=True, exist_ok=True)
            index.save_jsonl(cache)
    return index.split(split)


def build_model(cfg):
    torch.manual_seed(cfg.seed)
    model = model_from_config(cfg)
    if cfg.pretrained_weights:
        report = load_pretrained(model.encoder, cfg.pretrained_weights)
        log.info("pretrained encoder: %d matched, %d missing", len(report.matched), len(report.missing))
    return model


@dataclass
class TrainResult:
    model: torch.nn.Module
    out_dir: Path
    steps: list = field(default_factory=list)
    val: list = field(default_factory=list)

    @property
    def losses(self):
        return [e["loss"] for e in self.steps]

    @property
    def last_checkpoint(self):
        return self.out_dir / "last.ckpt"

    @property
    def best_checkpoint(self):
        return self.out_dir / "best.ckpt"


def _grad_norm(params):
    sq = [p.grad.detach().pow(2).sum() for p in params if p.grad is not None]
    return float(torch.sqrt(torch.stack(sq).sum())) if sq else 0.0


def _collate(ds, indices):
    xs, ys = zip(*(ds[int(i)] for i in indices))
    return torch.stack(xs), torch.stack(ys)


def _validate(model, items, cfg):
    if not items:
        return None
    ds = SegmentationDataset(items, cfg.binarize_threshold)
    report, _, _ = evaluate_samples(Predictor(model, cfg.threshold), (ds.sample(i) for i in range(len(ds))))
    model.train()
    return report.to_dict()


def train(cfg, out_dir=None, resume=None, train_items=None, val_items=None):
    """Run (or resume) a training job; returns the trained model and its logs.

    ``train_items``/``val_items`` override the dataset named in the config.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    set_determinism(cfg)

    if train_items is None:
        train_items = resolve_dataset(cfg, "train", out)
    if val_items is None:
        val_items = resolve_dataset(cfg, "val", out)
    if not train_items:
        raise ValueError("training split is empty")
    ds = SegmentationDataset(train_items, cfg.binarize_threshold, cfg.augment, cfg.seed)
    n_batches = math.ceil(len(ds) / cfg.batch_size)
    total = cfg.max_steps or cfg.epochs * n_batches

    model = build_model(cfg)
    dtype = next(model.parameters()).dtype
    opt = make_optimizer(model.parameters(), cfg)
    step, epoch, batch_in_epoch = 0, 0, 0
    steps, val = [], []
    best = -1.0

    if resume is not None:
        ckpt = load_checkpoint(resume)
        check_model_compatible(cfg, ckpt.config)
        model.load_state_dict(ckpt.model_state, strict=True)
        if ckpt.optim_state is not None:
            opt.load_state_dict(ckpt.optim_state)
        step = ckpt.meta["step"]
        epoch = ckpt.meta["epoch"]
        batch_in_epoch = ckpt.meta["batch_in_epoch"]
        steps = list(ckpt.meta.get("steps", []))
        val = list(ckpt.meta.get("val", []))
        best = ckpt.meta.get("best_miou", -1.0)

    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as f:
        for e in steps:
            f.write(json.dumps(e) + "\n")

    def snapshot(path, batch_pos):
        save_checkpoint(
            path, model, opt, cfg,
            step=step, epoch=epoch, batch_in_epoch=batch_pos, total_steps=total,
            steps=steps, val=val, best_miou=best,
        )

    model.train()
    params = [p for p in model.parameters() if p.requires_grad]
    focal = cfg.focal()
    with open(log_path, "a") as logf:
        while step < total:
            ds.epoch = epoch
            perm = torch.randperm(len(ds), generator=torch.Generator().manual_seed(cfg.seed * 1_000_003 + epoch))
            b = batch_in_epoch
            for b in range(batch_in_epoch, n_batches):
                if step >= total:
                    break
                x, y = _collate(ds, perm[b * cfg.batch_size : (b + 1) * cfg.batch_size])
                x, y = x.to(dtype), y.to(dtype)
                lr = poly_lr(step, total, cfg.initial_lr, cfg.poly_power)
                for g in opt.param_groups:
                    g["lr"] = lr
                loss = focal_loss_with_logits(model(x)[:, 0], y, focal)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                gn = _grad_norm(params)
                if not math.isfinite(loss.item()):
                    dump = {"step": step + 1, "epoch": epoch, "lr": lr, "grad_norm": gn, "loss": str(loss.item())}
                    (out / "nonfinite_dump.json").write_text(json.dumps(dump, indent=2))
                    raise FloatingPointError(f"non-finite loss at step {step + 1}: {dump}")
                if cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                opt.step()
                step += 1
                entry = {"step": step, "epoch": epoch, "loss": loss.item(), "lr": lr, "grad_norm": gn}
                steps.append(entry)
                logf.write(json.dumps(entry) + "\n")
                logf.flush()
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                    snapshot(out / f"step-{step}.ckpt", b + 1)
            else:
                b = n_batches

            report = _validate(model, val_items, cfg)
            done_epoch = epoch
            if b >= n_batches:
                epoch, batch_in_epoch = epoch + 1, 0
            else:
                batch_in_epoch = b
            if report is not None:
                val.append({"epoch": done_epoch, "step": step, **report})
                log.info("epoch %d step %d val mIoU %s", done_epoch, step, report["miou"])
                score = report["miou"] if report["miou"] is not None else -1.0
                if score > best:
                    best = score
                    snapshot(out / "best.ckpt", batch_in_epoch)
            snapshot(out / "last.ckpt", batch_in_epoch)
            save_weights(out / "weights.ddw", model, cfg)

    return TrainResult(model, out, steps, val)
