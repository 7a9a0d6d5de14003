"""Overlap metrics, the soft Dice loss, and aggregate reports.

A metric whose denominator is zero (e.g. precision with no predicted
positives) is defined as 1.0.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensorcore import ShapeError, Tensor4

METRIC_NAMES = ("dice", "jaccard", "precision", "recall", "accuracy")
COLUMN_TITLES = ("DSC", "Jaccard", "Precision", "Recall", "Accuracy")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion_counts(pred, gt, threshold: float = 0.5) -> ConfusionCounts:
    """Pixel counts; a prediction is positive iff ``prob >= threshold``."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction shape {pred.shape} != mask shape {gt.shape}")
    p = pred >= threshold
    g = gt >= 0.5
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def _ratio(num: int, den: int) -> float:
    return 1.0 if den == 0 else num / den


def dice(c: ConfusionCounts) -> float:
    return _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)


def jaccard(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp + c.fn)


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn)


METRICS = {"dice": dice, "jaccard": jaccard, "precision": precision,
           "recall": recall, "accuracy": accuracy}


def all_metrics(c: ConfusionCounts) -> dict[str, float]:
    return {k: fn(c) for k, fn in METRICS.items()}


def sd(values: Sequence[float]) -> float:
    """Population standard deviation (divides by n)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("sd of an empty sequence")
    return float(np.sqrt(np.mean((v - v.mean()) ** 2)))


# ---------------------------------------------------------------------------
# loss


def soft_dice_value(pred: np.ndarray, gt: np.ndarray, smooth: float = 1e-6) -> float:
    inter = float(np.sum(pred * gt, dtype=np.float64))
    denom = float(np.sum(pred, dtype=np.float64) + np.sum(gt, dtype=np.float64))
    return 1.0 - (2.0 * inter + smooth) / (denom + smooth)


def dice_loss_soft(pred: Tensor4, gt, smooth: float = 1e-6) -> Tensor4:
    """``1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)`` over the whole batch.

    Returns a (1, 1, 1, 1) tensor.  Sums accumulate in float64 so the loss value
    does not depend on the engine's working precision.
    """
    gt = np.asarray(gt)
    if gt.shape != pred.shape:
        raise ShapeError(f"prediction shape {pred.shape} != mask shape {gt.shape}")
    p = pred.data
    inter = np.sum(p * gt, dtype=np.float64)
    denom = np.sum(p, dtype=np.float64) + np.sum(gt, dtype=np.float64) + smooth
    num = 2.0 * inter + smooth
    out = np.full((1, 1, 1, 1), 1.0 - num / denom, dtype=p.dtype)

    def backward(g):
        scale = float(g.reshape(-1)[0])
        grad = -(2.0 * gt * denom - num) / (denom * denom)
        pred.accumulate((scale * grad).astype(p.dtype))

    return Tensor4.from_op(out, (pred,), backward)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    ids: list[str]
    rows: list[dict[str, float]]
    mean: dict[str, float] = field(default_factory=dict)
    sd: dict[str, float] = field(default_factory=dict)
    pooled: dict[str, float] | None = None

    @property
    def n(self) -> int:
        return len(self.rows)

    @classmethod
    def from_counts(cls, ids: Sequence[str], counts: Sequence[ConfusionCounts]) -> "MetricsReport":
        if not counts:
            raise ValueError("cannot build a report from zero images")
        rows = [all_metrics(c) for c in counts]
        mean = {k: math.fsum(r[k] for r in rows) / len(rows) for k in METRIC_NAMES}
        spread = {k: sd([r[k] for r in rows]) for k in METRIC_NAMES}
        total = counts[0]
        for c in counts[1:]:
            total = total + c
        return cls(list(ids), rows, mean, spread, all_metrics(total))

    def table(self, label: str = "mean") -> str:
        return format_table([(label, self.mean), ("SD", self.sd)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("id," + ",".join(COLUMN_TITLES) + "\n")
        for i, r in zip(self.ids, self.rows):
            buf.write(i + "," + ",".join(f"{r[k]:.6f}" for k in METRIC_NAMES) + "\n")
        buf.write("mean," + ",".join(f"{self.mean[k]:.6f}" for k in METRIC_NAMES) + "\n")
        buf.write("sd," + ",".join(f"{self.sd[k]:.6f}" for k in METRIC_NAMES) + "\n")
        return buf.getvalue()


def format_table(rows: Sequence[tuple[str, dict[str, float]]]) -> str:
    """Aligned plain-text table in DSC/Jaccard/Precision/Recall/Accuracy order."""
    width = max([len("Method")] + [len(r[0]) for r in rows])
    lines = ["Method".ljust(width) + "".join(f"  {t:>9}" for t in COLUMN_TITLES)]
    for label, vals in rows:
        lines.append(label.ljust(width) + "".join(f"  {vals[k]:9.4f}" for k in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def format_csv(rows: Sequence[tuple[str, dict[str, float]]]) -> str:
    out = ["method," + ",".join(COLUMN_TITLES)]
    for label, vals in rows:
        out.append(label + "," + ",".join(f"{vals[k]:.6f}" for k in METRIC_NAMES))
    return "\n".join(out) + "\n"
