"""Evaluation, mask prediction and feature heatmaps.

Whole images of any size go through ``Predictor``, which reflect-pads to a
multiple of 32, runs the network and crops back.
"""

import csv
import json
import logging
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .checkpoint import check_model_compatible, load_checkpoint
from .data import Sample, crop_back, load_sample, pad_to_multiple, read_raster
from .metrics import METRIC_COLUMNS, ConfusionCounts, accumulate_confusion, compute_metrics
from .model import FEATURE_TAGS, predict_mask

log = logging.getLogger(__name__)

__all__ = [
    "Predictor",
    "evaluate_samples",
    "iter_samples",
    "evaluate",
    "write_report",
    "predict",
    "channel_mean",
    "normalize_heatmap",
    "heatmap_array",
    "export_heatmap",
]


class Predictor:
    def __init__(self, model, threshold=0.5, multiple=32):
        self.model = model.eval()
        self.threshold = threshold
        self.multiple = multiple
        self.dtype = next(model.parameters()).dtype

    def _prepare(self, image):
        x = torch.as_tensor(np.ascontiguousarray(image)).to(self.dtype)
        x, geom = pad_to_multiple(x, self.multiple)
        return x[None], geom

    @torch.no_grad()
    def logits(self, image):
        x, geom = self._prepare(image)
        return crop_back(self.model(x)[0, 0], geom)

    def mask(self, image):
        return predict_mask(self.logits(image), self.threshold).numpy()

    @torch.no_grad()
    def features(self, image):
        x, geom = self._prepare(image)
        return self.model(x, return_features=True), geom

    __call__ = mask


def _per_image_row(key, counts):
    row = {"key": key, "tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn}
    row.update(compute_metrics(counts).row())
    return row


def evaluate_samples(predict_fn, samples):
    """Pool confusion counts of ``predict_fn(image) -> binary mask`` over samples.

    Returns (report, per-image rows, per-image mean of each defined metric).
    """
    total = ConfusionCounts()
    rows = []
    for s in samples:
        c = accumulate_confusion(predict_fn(s.image), s.mask)
        total = total + c
        rows.append(_per_image_row(s.key, c))
    report = compute_metrics(total)
    means = {}
    for col in METRIC_COLUMNS:
        vals = [r[col] for r in rows if r[col] is not None]
        means[col] = float(np.mean(vals)) if vals else None
    return report, rows, means


def iter_samples(items, binarize_threshold):
    for it in items:
        yield it if isinstance(it, Sample) else load_sample(it, binarize_threshold)


def write_report(out_dir, name, payload, rows=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    if rows:
        with open(out / f"{name}.csv", "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: "" if v is None else v for k, v in r.items()})


def evaluate(checkpoint, split="test", dataset=None, out_dir=None, threshold=None, cfg=None):
    """Evaluate a checkpoint on a split and optionally write ``eval_<split>.json/.csv``."""
    from .train import resolve_dataset

    ckpt = load_checkpoint(checkpoint)
    if cfg is not None:
        check_model_compatible(cfg, ckpt.config)
    run_cfg = ckpt.config if cfg is None else cfg
    if dataset is not None:
        run_cfg = run_cfg.replace(dataset=str(dataset))
    thr = threshold if threshold is not None else run_cfg.threshold
    predictor = Predictor(ckpt.build_model(), thr)
    items = resolve_dataset(run_cfg, split)
    if not items:
        raise ValueError(f"split {split!r} is empty for dataset {run_cfg.dataset!r}")
    report, rows, means = evaluate_samples(predictor, iter_samples(items, run_cfg.binarize_threshold))
    payload = {
        "split": split,
        "checkpoint": str(checkpoint),
        "threshold": thr,
        "metrics": report.to_dict(),
        "per_image_mean": means,
    }
    if out_dir is not None:
        write_report(out_dir, f"eval_{split}", payload, rows)
    return report, rows


def overlay(image_u8, mask, alpha=0.5):
    out = image_u8.astype(np.float32)
    m = mask.astype(bool)
    out[m] = (1 - alpha) * out[m] + alpha * np.array([255.0, 0.0, 0.0])
    return out.round().astype(np.uint8)


def predict(checkpoint, paths, out_dir, threshold=0.5):
    """Write ``<id>_mask.png`` (0/255) and ``<id>_overlay.png`` per input image.

    Unreadable inputs are logged and skipped; returns (written ids, {path: error}).
    """
    ckpt = load_checkpoint(checkpoint)
    predictor = Predictor(ckpt.build_model(), threshold)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written, failures = [], {}
    for p in map(Path, paths):
        try:
            rgb = read_raster(p, "RGB")
        except OSError as e:
            log.error("%s", e)
            failures[str(p)] = str(e)
            continue
        mask = predictor.mask(rgb.transpose(2, 0, 1).astype(np.float32) / 255.0)
        Image.fromarray(mask * 255).save(out / f"{p.stem}_mask.png")
        Image.fromarray(overlay(rgb, mask)).save(out / f"{p.stem}_overlay.png")
        written.append(p.stem)
    return written, failures


def channel_mean(feature):
    """Uniformly weighted average over channels of a (C, h, w) map."""
    return feature.mean(dim=0)


def normalize_heatmap(m):
    """Min-max scale to [0, 255]; a constant map becomes uniform 128."""
    lo, hi = float(m.min()), float(m.max())
    if hi - lo <= 0.0:
        return torch.full_like(m, 128.0)
    return (m - lo) / (hi - lo) * 255.0


def heatmap_array(feature):
    return normalize_heatmap(channel_mean(feature))


def export_heatmap(model, image, layer_tag, out_path, colormap=None):
    """Channel-mean heatmap of one tagged feature map, saved as a PNG at input resolution."""
    if layer_tag not in FEATURE_TAGS:
        raise ValueError(f"unknown layer_tag {layer_tag!r}; valid tags: {', '.join(FEATURE_TAGS)}")
    predictor = Predictor(model)
    feats, geom = predictor.features(image)
    feat = feats[layer_tag]
    if feat is None:
        raise ValueError(f"this model variant has no {layer_tag!r} feature")
    hm = heatmap_array(feat[0].double())
    size = (geom.height + geom.pad_bottom, geom.width + geom.pad_right)
    hm = F.interpolate(hm[None, None], size=size, mode="bilinear", align_corners=False)[0, 0]
    hm = crop_back(hm, geom).clamp(0, 255).round().to(torch.uint8).numpy()
    if colormap:
        from matplotlib import colormaps

        rgba = colormaps[colormap](hm)
        img = Image.fromarray((rgba[..., :3] * 255).round().astype(np.uint8))
    else:
        img = Image.fromarray(hm)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    img.save(out_path)
    return hm
