"""Three-variant ablation: U-Net baseline, + DCAM, + DCAM + dual decoder.

All variants share seed, data and step budget and differ only in the
``use_dcam`` / ``use_small_decoder`` flags. The metric ordering between
variants is recorded in the report, never asserted.
"""

import logging
import traceback
from pathlib import Path

from .evaluate import Predictor, evaluate_samples, iter_samples, write_report
from .train import resolve_dataset, train

log = logging.getLogger(__name__)

__all__ = ["VARIANTS", "ABLATION_COLUMNS", "variant_configs", "ablate"]

VARIANTS = (
    ("U-Net", dict(use_dcam=False, use_small_decoder=False)),
    ("U-Net + DCAM", dict(use_dcam=True, use_small_decoder=False)),
    ("U-Net + DCAM + Dual Decoder", dict(use_dcam=True, use_small_decoder=True)),
)
ABLATION_COLUMNS = ("accuracy", "precision", "recall", "f1", "miou")


def variant_configs(cfg):
    return [(name, cfg.replace(**flags)) for name, flags in VARIANTS]


def _slug(name):
    return name.lower().replace(" + ", "_").replace(" ", "-")


def ablate(cfg, out_dir=None, split="val"):
    """Train and score each variant; writes ``ablation.json`` and ``ablation.csv``.

    A failing variant is logged and reported with an ``error`` entry; the
    remaining variants still run.
    """
    out = Path(out_dir or cfg.out_dir)
    train_items = resolve_dataset(cfg, "train", out)
    eval_items = resolve_dataset(cfg, split, out) or train_items
    rows, errors = [], {}
    for name, vcfg in variant_configs(cfg):
        log.info("ablation variant: %s", name)
        try:
            res = train(vcfg, out / _slug(name), train_items=train_items, val_items=[])
            report, _, _ = evaluate_samples(Predictor(res.model, vcfg.threshold), iter_samples(eval_items, vcfg.binarize_threshold))
            row = {"method": name}
            row.update({c: getattr(report, c) for c in ABLATION_COLUMNS})
            rows.append(row)
        except Exception as e:  # keep going with the other variants
            log.error("variant %s failed: %s", name, e)
            errors[name] = "".join(traceback.format_exception_only(type(e), e)).strip()
    scored = [r for r in rows if r["miou"] is not None]
    payload = {
        "split": split,
        "columns": list(ABLATION_COLUMNS),
        "rows": rows,
        "errors": errors,
        "miou_ordering": [r["method"] for r in sorted(scored, key=lambda r: r["miou"])],
    }
    write_report(out, "ablation", payload, rows)
    return payload

