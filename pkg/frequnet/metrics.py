"""
Segmentation metrics for frequnet
Hard per-class Dice and the Dice gap, aggregated globally: intersections and
set sizes are summed over every evaluated image before the ratio is taken.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from .errors import DataError, DimensionError

logger = logging.getLogger(__name__)

AGGREGATION = "global"


@dataclass(frozen=True)
class MetricsReport:
    """Per-class hard Dice over a split.

    Attributes:
        class_dice: Dice per class, class 0 is background.
        absent: True where a class appears in neither prediction nor truth;
            such classes score 1.0 and are left out of the gap.
        dice_gap: max - min Dice over the present foreground classes.
        gt_counts: Ground-truth pixel count per class.
        pred_counts: Predicted pixel count per class.
        aggregation: How counts were combined across images.
    """
    class_dice: Tuple[float, ...]
    absent: Tuple[bool, ...]
    dice_gap: float
    gt_counts: Tuple[int, ...]
    pred_counts: Tuple[int, ...]
    aggregation: str = AGGREGATION

    @property
    def num_classes(self) -> int:
        return len(self.class_dice)

    def foreground_dice(self) -> Tuple[float, ...]:
        return self.class_dice[1:]

    def minority_class(self) -> int:
        """Foreground class with the fewest ground-truth pixels."""
        counts = self.gt_counts[1:]
        return 1 + int(np.argmin(counts))

    def to_record(self, epoch: int, split: str) -> Dict[str, Any]:
        return {
            "kind": "epoch",
            "epoch": epoch,
            "split": split,
            "aggregation": self.aggregation,
            "class_dice": list(self.class_dice),
            "absent": list(self.absent),
            "dice_gap": self.dice_gap,
            "gt_counts": list(self.gt_counts),
            "pred_counts": list(self.pred_counts),
        }


class DiceCounter:
    """Accumulates per-class intersection and set sizes across images."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.intersection = np.zeros(num_classes, dtype=np.int64)
        self.pred = np.zeros(num_classes, dtype=np.int64)
        self.truth = np.zeros(num_classes, dtype=np.int64)

    def add(self, pred_labels: np.ndarray, labels: np.ndarray):
        pred_labels = np.asarray(pred_labels)
        labels = np.asarray(labels)
        if pred_labels.shape != labels.shape:
            raise DimensionError(f"hard_dice: prediction shape {pred_labels.shape} != label shape {labels.shape}")
        for name, arr in (("prediction", pred_labels), ("labels", labels)):
            if arr.size and (arr.min() < 0 or arr.max() >= self.num_classes):
                raise DataError(f"hard_dice: {name} values outside [0, {self.num_classes})")
        k = self.num_classes
        self.pred += np.bincount(pred_labels.ravel(), minlength=k)
        self.truth += np.bincount(labels.ravel(), minlength=k)
        self.intersection += np.bincount(labels[pred_labels == labels].ravel(), minlength=k)

    def merge(self, other: "DiceCounter"):
        self.intersection += other.intersection
        self.pred += other.pred
        self.truth += other.truth

    def report(self) -> MetricsReport:
        denom = self.pred + self.truth
        absent = denom == 0
        dice = np.where(absent, 1.0, 2.0 * self.intersection / np.maximum(denom, 1))
        present_fg = [float(dice[k]) for k in range(1, self.num_classes) if not absent[k]]
        gap = max(present_fg) - min(present_fg) if present_fg else 0.0
        return MetricsReport(
            class_dice=tuple(float(v) for v in dice),
            absent=tuple(bool(a) for a in absent),
            dice_gap=float(gap),
            gt_counts=tuple(int(v) for v in self.truth),
            pred_counts=tuple(int(v) for v in self.pred),
        )


def hard_dice(pred_labels: np.ndarray, labels: np.ndarray, num_classes: int) -> MetricsReport:
    """Per class 2|P_k & G_k| / (|P_k| + |G_k|) and the foreground Dice gap."""
    counter = DiceCounter(num_classes)
    counter.add(pred_labels, labels)
    return counter.report()
