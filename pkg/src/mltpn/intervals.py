"""Temporal intervals, IoU/GIoU, and the three detection losses.

Every geometric quantity exists twice: as a plain function on floats
(used by matching, NMS and evaluation) and as a graph operation on tensors
of endpoints (used by the training loss).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

MIN_LENGTH = 1e-3


@dataclass(frozen=True, order=True)
class Interval:
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"interval needs start < end, got [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)

    def shifted(self, offset: float) -> "Interval":
        return Interval(self.start + offset, self.end + offset)


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 10.0
    alpha3: float = 0.3

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


def intersection(p: Interval, g: Interval) -> float:
    return max(0.0, min(p.end, g.end) - max(p.start, g.start))


def iou(p: Interval, g: Interval) -> float:
    inter = intersection(p, g)
    return inter / (p.length + g.length - inter)


def giou(p: Interval, g: Interval) -> float:
    inter = intersection(p, g)
    union = p.length + g.length - inter
    hull = max(p.end, g.end) - min(p.start, g.start)
    return inter / union - (hull - union) / hull


def giou_loss(p: Interval, g: Interval) -> float:
    return 1.0 - giou(p, g)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (n, 2) and (m, 2) [start, end] arrays -> (n, m)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    inter = np.clip(np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0.0, None)
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    return inter / union


# ---------------------------------------------------------------- tensor forms

def giou_terms(p_start: Tensor, p_end: Tensor, g_start, g_end) -> Tensor:
    """Per-sample GIoU between predicted and target intervals.

    Predicted intervals shorter than ``MIN_LENGTH`` are widened to it so a
    collapsed prediction still yields a finite loss.
    """
    p_end = T.maximum(p_end, p_start + MIN_LENGTH)
    if not isinstance(g_start, Tensor):
        g_start = Tensor(np.asarray(g_start, dtype=np.float64))
    if not isinstance(g_end, Tensor):
        g_end = Tensor(np.asarray(g_end, dtype=np.float64))
    inter = T.relu(T.minimum(p_end, g_end) - T.maximum(p_start, g_start))
    union = (p_end - p_start) + (g_end - g_start) - inter
    hull = T.maximum(p_end, g_end) - T.minimum(p_start, g_start)
    return inter / union - (hull - union) / hull


def giou_loss_terms(p_start: Tensor, p_end: Tensor, g_start, g_end) -> Tensor:
    return 1.0 - giou_terms(p_start, p_end, g_start, g_end)


def cross_entropy_terms(rows: Tensor, labels: Sequence[int]) -> Tensor:
    """Per-sample softmax cross-entropy for (N, C+1) logits."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = rows.shape
    if labels.shape != (n,):
        raise T.ShapeError(f"labels shape {labels.shape} does not match logits {rows.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k - 1}]: {labels.min()}..{labels.max()}")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    return -T.sum(T.log_softmax(rows, axis=1) * onehot, axes=1)


def classification_loss(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean cross-entropy; ``logits`` is (C+1) x N with class 0 = background."""
    return T.mean(cross_entropy_terms(T.transpose(logits, (1, 0)), labels))


def confidence_terms(p_iou: Tensor, g_iou) -> Tensor:
    g = np.asarray(g_iou, dtype=np.float64)
    if g.shape != p_iou.shape:
        raise T.ShapeError(f"length mismatch: predicted {p_iou.shape} vs target {g.shape}")
    return T.smooth_l1(p_iou - g)


def confidence_loss(p_iou: Tensor, g_iou) -> Tensor:
    return T.mean(confidence_terms(p_iou, g_iou))


def joint_loss(cls_terms: Tensor | None, conf_terms: Tensor | None, reg_terms: Tensor | None,
               weights: LossWeights, n_cls: int, n_conf: int, n_reg: int) -> Tensor:
    """alpha1 * sum(cls)/N_cls + alpha2 * sum(conf)/N_conf + alpha3 * sum(reg)/N_reg.

    A term whose weight is zero may have no samples; a weighted term with a
    zero count is an error.
    """
    total = None
    for label, terms, alpha, count in (("cls", cls_terms, weights.alpha1, n_cls),
                                       ("conf", conf_terms, weights.alpha2, n_conf),
                                       ("reg", reg_terms, weights.alpha3, n_reg)):
        if count == 0 or terms is None or terms.data.size == 0:
            if alpha != 0:
                raise ValueError(f"{label} term has weight {alpha} but {count} samples")
            continue
        part = T.sum(terms) * (alpha / count)
        total = part if total is None else total + part
    if total is None:
        return Tensor(0.0)
    return total


def normalized_term(terms: Tensor | None, count: int) -> float:
    if terms is None or count == 0:
        return 0.0
    return float(terms.data.sum()) / count

