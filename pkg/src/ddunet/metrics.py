"""Confusion counts and the road-segmentation metric report.

Accuracy is (TP + TN) / total. Ratios with a zero denominator come back as
``None`` ("undefined") and serialize to JSON null.
"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

__all__ = ["ConfusionCounts", "MetricsReport", "accumulate_confusion", "compute_metrics", "METRIC_COLUMNS"]

METRIC_COLUMNS = ("accuracy", "precision", "recall", "f1", "iou_road", "miou")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def _as_binary(a, what):
    a = np.asarray(a)
    if a.size and not np.isin(a, (0, 1)).all():
        raise ValueError(f"{what} must be binary (0/1)")
    return a.astype(bool)


def accumulate_confusion(pred, gt, acc=None):
    pred = _as_binary(pred, "prediction")
    gt = _as_binary(gt, "ground truth")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = pred.size - tp - fp - fn
    counts = ConfusionCounts(tp, fp, fn, tn)
    return counts if acc is None else acc + counts


def _ratio(num, den):
    return num / den if den else None


@dataclass(frozen=True)
class MetricsReport:
    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    iou_road: Optional[float]
    miou: Optional[float]
    counts: ConfusionCounts
    num_classes: int = 2

    def row(self):
        return {k: getattr(self, k) for k in METRIC_COLUMNS}

    def to_dict(self):
        d = self.row()
        d["counts"] = asdict(self.counts)
        d["num_classes"] = self.num_classes
        return d


def f1_score(precision, recall):
    if precision is None or recall is None or precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def compute_metrics(counts):
    if counts.total <= 0:
        raise ValueError("cannot compute metrics over zero pixels")
    c = counts
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    iou = _ratio(c.tp, c.tp + c.fp + c.fn)
    return MetricsReport(
        accuracy=(c.tp + c.tn) / c.total,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        iou_road=iou,
        # background is excluded from the mean, so mIoU is the road IoU
        miou=iou,
        counts=c,
    )
