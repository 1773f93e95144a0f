"""
Loss Module for frequnet
This module implements the composite segmentation objective: the
frequency-aware loss on wavelet detail subbands, multi-class soft Dice,
Top-K cross-entropy and their weighted sum.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Tuple

import numpy as np

from .errors import ConfigError, DataError, DimensionError, NumericError
from .tensor_core import Tensor, log_softmax_channel, record, softmax_channel, tensor_abs
from .wavelet import WaveletSpec, dwt2

logger = logging.getLogger(__name__)

DICE_EPS = 1e-5
FREQ_DETAIL_BANDS = 3


@dataclass(frozen=True)
class LossWeights:
    """Weights of the composite loss.

    Attributes:
        w_dice: Weight of the soft Dice term.
        w_topk: Weight of the Top-K cross-entropy term.
        w_freq: Weight of the frequency-aware term (0 disables it).
        topk_percent: Percentage k of hardest pixels averaged, in (0, 100].
        literal_ce: Use the class-averaged log-softmax form instead of the
            per-pixel CE at the true class.
    """
    w_dice: float = 1.0
    w_topk: float = 1.0
    w_freq: float = 0.5
    topk_percent: float = 10.0
    literal_ce: bool = False

    def validate(self):
        for name in ("w_dice", "w_topk", "w_freq"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise ConfigError(f"loss.{name} must be a finite non-negative number, got {value}")
        if max(self.w_dice, self.w_topk, self.w_freq) <= 0.0:
            raise ConfigError("loss weights: at least one of w_dice, w_topk, w_freq must be positive")
        if not 0.0 < self.topk_percent <= 100.0:
            raise ConfigError(f"loss.topk_percent must lie in (0, 100], got {self.topk_percent}")

    def without_freq(self) -> "LossWeights":
        return replace(self, w_freq=0.0)


@dataclass(frozen=True)
class LossReport:
    """Values of one composite loss evaluation.

    `loss` is the differentiable total; the float fields are detached copies.
    For deep supervision, `aux_terms` holds the weighted auxiliary totals.
    """
    total: float
    dice_term: float
    topk_term: float
    freq_term: float
    class_dice: Tuple[float, ...]
    weights: LossWeights
    loss: Tensor = field(repr=False, compare=False)
    aux_terms: Tuple[float, ...] = ()

    def to_record(self, step: int, lr: float) -> Dict[str, Any]:
        """Flat dict for one metrics-log line."""
        return {
            "kind": "step",
            "step": step,
            "lr": lr,
            "total": self.total,
            "dice": self.dice_term,
            "topk": self.topk_term,
            "freq": self.freq_term,
            "class_dice": list(self.class_dice),
            "aux": list(self.aux_terms),
        }


# --- Helpers ---


def check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise DimensionError(f"labels must have shape (B, H, W), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DataError(f"label values must lie in [0, {num_classes}), got range "
                        f"[{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def one_hot(labels: np.ndarray, num_classes: int) -> Tensor:
    """(B, H, W) integer labels -> constant (B, K, H, W) one-hot tensor."""
    labels = check_labels(labels, num_classes)
    return Tensor(np.moveaxis(np.eye(num_classes)[labels], -1, 1))


def _check_finite(term: str, value: Tensor):
    if not np.all(np.isfinite(value.data)):
        raise NumericError(term, f"value {value.data!r}")


def topk_mean(values: Tensor, count: int) -> Tensor:
    """Mean of the `count` largest entries of `values` (any shape).

    Ties are broken by a stable descending sort, so the selection is
    deterministic.
    """
    flat = values.data.reshape(-1)
    if not 1 <= count <= flat.size:
        raise DimensionError(f"topk_mean: count {count} outside [1, {flat.size}]")
    order = np.argsort(-flat, kind="stable")[:count]

    def vjp(g):
        grad = np.zeros(flat.size)
        grad[order] = g / count
        return (grad.reshape(values.shape),)

    return record("topk_mean", (values,), np.asarray(flat[order].mean()), vjp)


# --- Loss terms ---


def freq_aware_loss(prob: Tensor, onehot: Tensor, spec: WaveletSpec) -> Tensor:
    """Mean L1 distance between the LH, HL and HH subbands, divided by 3.

    LL is excluded; each class channel is transformed independently.
    """
    if prob.shape != onehot.shape:
        raise DimensionError(f"freq_aware_loss: prob {prob.shape} and onehot {onehot.shape} differ")
    pred, truth = dwt2(prob, spec), dwt2(onehot, spec)
    total = None
    for p, t in zip(pred.details(), truth.details()):
        term = tensor_abs(p - t).mean()
        total = term if total is None else total + term
    return total * (1.0 / FREQ_DETAIL_BANDS)


def soft_dice_per_class(prob: Tensor, onehot: Tensor, eps: float = DICE_EPS) -> Tensor:
    """(I_k + eps) / (S_k + eps) per class, summed over batch and pixels."""
    if prob.shape != onehot.shape:
        raise DimensionError(f"dice_loss: prob {prob.shape} and onehot {onehot.shape} differ")
    intersection = (prob * onehot).sum(axis=(0, 2, 3))
    denominator = prob.sum(axis=(0, 2, 3)) + onehot.sum(axis=(0, 2, 3))
    return (intersection + eps) / (denominator + eps)


def dice_loss(prob: Tensor, onehot: Tensor, eps: float = DICE_EPS) -> Tensor:
    """-(2 / K) * sum_k (I_k + eps) / (S_k + eps); lies in (-1, 0]."""
    ratio = soft_dice_per_class(prob, onehot, eps)
    return ratio.sum() * (-2.0 / prob.shape[1])


def per_pixel_ce(logits: Tensor, labels: np.ndarray, literal: bool = False) -> Tensor:
    """Cross-entropy per pixel, shape (B, H, W).

    The default is -log softmax at the true class. `literal` averages
    -log softmax over every class and ignores the label.
    """
    log_prob = log_softmax_channel(logits)
    if literal:
        check_labels(labels, logits.shape[1])
        return log_prob.mean(axis=1) * -1.0
    onehot = one_hot(labels, logits.shape[1])
    return (log_prob * onehot).sum(axis=1) * -1.0


def topk_count(n: int, k: float) -> int:
    """floor(n * k / 100), at least 1."""
    return max(1, int(math.floor(n * k / 100.0)))


def topk_ce_loss(logits: Tensor, labels: np.ndarray, k: float, literal: bool = False) -> Tensor:
    """Average of the hardest k% per-pixel cross-entropies.

    Raises:
        DataError: If a label lies outside [0, K).
        ConfigError: If k is outside (0, 100].
    """
    if not 0.0 < k <= 100.0:
        raise ConfigError(f"topk percent must lie in (0, 100], got {k}")
    if logits.ndim != 4:
        raise DimensionError(f"topk_ce_loss expects (B, K, H, W) logits, got {logits.shape}")
    ce = per_pixel_ce(logits, labels, literal)
    return topk_mean(ce, topk_count(ce.size, k))


def total_loss(logits: Tensor, labels: np.ndarray, weights: LossWeights, spec: WaveletSpec) -> LossReport:
    """Weighted sum w_dice * Dice + w_topk * TopK + w_freq * Freq.

    All three terms are evaluated so the report is complete; a term with
    zero weight does not contribute to the gradient.

    Raises:
        NumericError: If any term is non-finite; the term is named.
    """
    num_classes = logits.shape[1]
    prob = softmax_channel(logits)
    onehot = one_hot(labels, num_classes)

    dice_ratio = soft_dice_per_class(prob, onehot)
    dice = dice_ratio.sum() * (-2.0 / num_classes)
    topk = topk_ce_loss(logits, labels, weights.topk_percent, weights.literal_ce)
    freq = freq_aware_loss(prob, onehot, spec)
    for term, value in (("dice", dice), ("topk", topk), ("freq", freq)):
        _check_finite(term, value)

    loss = dice * weights.w_dice + topk * weights.w_topk + freq * weights.w_freq
    _check_finite("total", loss)
    return LossReport(
        total=loss.item(),
        dice_term=dice.item(),
        topk_term=topk.item(),
        freq_term=freq.item(),
        class_dice=tuple(float(v) for v in 2.0 * dice_ratio.data),
        weights=weights,
        loss=loss,
    )


def combine_reports(main: LossReport, aux: Tuple[Tuple[float, LossReport], ...]) -> LossReport:
    """Adds weighted auxiliary reports onto the main report."""
    loss = main.loss
    for weight, report in aux:
        loss = loss + report.loss * weight
    _check_finite("total", loss)
    return replace(main, total=loss.item(), loss=loss,
                   aux_terms=tuple(weight * report.total for weight, report in aux))
