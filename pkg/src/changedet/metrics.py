"""Pixel-level scoring of binary change maps and the four-color
confusion renderer (white TP, black TN, red FP, green FN).

Aggregation over a split accumulates counts globally before scoring
(micro-averaging); every report states this in its header.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image


class MetricError(ValueError):
    pass


@dataclass
class ConfusionStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionStats") -> "ConfusionStats":
        return ConfusionStats(self.tp + other.tp, self.fp + other.fp,
                              self.fn + other.fn, self.tn + other.tn)


@dataclass
class Scores:
    precision: float
    recall: float
    f1: float
    iou: float
    oa: float
    zero_division: tuple[str, ...] = ()

    def as_row(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "iou": self.iou, "oa": self.oa}


def _check_binary(arr: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.isin(arr, (0, 1)).all():
        raise MetricError(f"{name} must be 0/1 valued")
    return arr.astype(bool)


def confusion(pred, gt) -> ConfusionStats:
    """2x2 contingency counts with 'changed' as the positive class."""
    pred = _check_binary(pred, "pred")
    gt = _check_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return ConfusionStats(
        tp=int(np.count_nonzero(pred & gt)),
        fp=int(np.count_nonzero(pred & ~gt)),
        fn=int(np.count_nonzero(~pred & gt)),
        tn=int(np.count_nonzero(~pred & ~gt)),
    )


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def scores(stats: ConfusionStats) -> Scores:
    """Precision, recall, F1, IoU, and overall accuracy from counts.

    0/0 ratios score 0.0 and are flagged by name.
    """
    if stats.total == 0:
        raise MetricError("scores() needs at least one evaluated pixel")
    flags: list[str] = []
    pre = _ratio(stats.tp, stats.tp + stats.fp, "precision", flags)
    rec = _ratio(stats.tp, stats.tp + stats.fn, "recall", flags)
    if pre + rec > 0:
        f1 = 2.0 * pre * rec / (pre + rec)
    else:
        flags.append("f1")
        f1 = 0.0
    iou = _ratio(stats.tp, stats.tp + stats.fp + stats.fn, "iou", flags)
    oa = (stats.tp + stats.tn) / stats.total
    return Scores(pre, rec, f1, iou, oa, tuple(flags))


def f1_from_precision_recall(precision: float, recall: float) -> float:
    """Harmonic mean; scale-free, so percent inputs give percent output."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# four-color confusion map
TP_COLOR = (255, 255, 255)
TN_COLOR = (0, 0, 0)
FP_COLOR = (255, 0, 0)
FN_COLOR = (0, 255, 0)


def render_confusion_map(pred, gt) -> np.ndarray:
    """(H, W, 3) uint8 visualization of the four confusion categories."""
    pred = _check_binary(pred, "pred")
    gt = _check_binary(gt, "gt")
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    out = np.zeros((*pred.shape, 3), dtype=np.uint8)
    out[pred & gt] = TP_COLOR
    out[~pred & ~gt] = TN_COLOR
    out[pred & ~gt] = FP_COLOR
    out[~pred & gt] = FN_COLOR
    return out


def decode_confusion_map(rgb: np.ndarray) -> ConfusionStats:
    rgb = np.asarray(rgb)
    flat = rgb.reshape(-1, 3)
    counts = {}
    for name, color in (("tp", TP_COLOR), ("tn", TN_COLOR),
                        ("fp", FP_COLOR), ("fn", FN_COLOR)):
        counts[name] = int((flat == np.asarray(color, dtype=np.uint8)).all(axis=1).sum())
    if sum(counts.values()) != flat.shape[0]:
        raise MetricError("confusion map holds colors outside the four categories")
    return ConfusionStats(**counts)


def write_report(path: str, rows: dict[str, Scores]) -> None:
    """CSV metric table, one row per split, percentages to two decimals."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# averaging: micro (counts pooled over the split before scoring)\n")
        fh.write("split,precision,recall,f1,iou,oa\n")
        for split, sc in rows.items():
            fh.write(f"{split},{sc.precision * 100:.2f},{sc.recall * 100:.2f},"
                     f"{sc.f1 * 100:.2f},{sc.iou * 100:.2f},{sc.oa * 100:.2f}\n")


def save_confusion_png(path: str, pred, gt) -> None:
    Image.fromarray(render_confusion_map(pred, gt), mode="RGB").save(path)
