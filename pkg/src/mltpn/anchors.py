"""Default temporal anchors, ground-truth matching, loss sampling, decoding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .intervals import Interval, iou_matrix

DEFAULT_RATIOS = (0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0)
POSITIVE_IOU = 0.5
NEGATIVE_RATIO = 3
EMPTY_NEGATIVES = 16


@dataclass(frozen=True)
class AnchorLayout:
    level_lengths: tuple[int, ...]
    ratios: tuple[float, ...]
    sequence_length: int

    def __post_init__(self):
        if not self.ratios:
            raise ValueError("at least one anchor ratio is required")
        for t in self.level_lengths:
            if t < 1 or self.sequence_length % t:
                raise ValueError(f"level length {t} does not divide sequence length {self.sequence_length}")

    @property
    def num_anchors(self) -> int:
        return len(self.ratios) * sum(self.level_lengths)


@dataclass(frozen=True)
class MatchResult:
    label: int
    matched_gt: Interval | None
    target_iou: float
    is_positive: bool


@dataclass
class MatchArrays:
    """Column form of a list of MatchResult, for vectorised loss assembly."""
    labels: np.ndarray  # (A,) int
    positive: np.ndarray  # (A,) bool
    gt_index: np.ndarray  # (A,) int, -1 when unmatched
    gt_bounds: np.ndarray  # (A, 2), zeros when unmatched
    target_iou: np.ndarray  # (A,)


def generate_anchors(layout: AnchorLayout) -> list[tuple[int, int, Interval]]:
    """Level-major, cell-second, ratio-minor list of (level, cell, interval)."""
    out = []
    bounds = anchor_array(layout)
    k = 0
    for level, t in enumerate(layout.level_lengths):
        for cell in range(t):
            for _ in layout.ratios:
                out.append((level, cell, Interval(float(bounds[k, 0]), float(bounds[k, 1]))))
                k += 1
    return out


def anchor_array(layout: AnchorLayout) -> np.ndarray:
    """(A, 2) anchor bounds; may extend beyond [0, T]."""
    rows = []
    ratios = np.asarray(layout.ratios, dtype=np.float64)
    for t in layout.level_lengths:
        cell = layout.sequence_length / t
        centers = (np.arange(t) + 0.5) * cell
        widths = ratios * cell
        c = np.repeat(centers, len(ratios))
        w = np.tile(widths, t)
        rows.append(np.stack([c - w / 2, c + w / 2], axis=1))
    return np.concatenate(rows, axis=0)


def match_arrays(anchors: np.ndarray, gt_bounds: np.ndarray, gt_labels: Sequence[int],
                 threshold: float = POSITIVE_IOU) -> MatchArrays:
    """Assign each anchor its best ground truth, then force one anchor per GT.

    Threshold rule: an anchor is positive when its highest IoU (ties -> the
    earliest GT) reaches ``threshold``. Forced rule: (anchor, GT) pairs are
    claimed greedily in descending IoU order, one anchor per GT and one GT
    per anchor, ties going to the earliest anchor then earliest GT; a claim
    with IoU > 0 makes that anchor positive for that GT. So each GT gets its
    own positive whenever it overlaps more anchors than there are other GTs.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    gt_bounds = np.asarray(gt_bounds, dtype=np.float64).reshape(-1, 2)
    gt_labels = np.asarray(gt_labels, dtype=np.int64)
    a, g = len(anchors), len(gt_bounds)
    labels = np.zeros(a, dtype=np.int64)
    positive = np.zeros(a, dtype=bool)
    gt_index = np.full(a, -1, dtype=np.int64)
    if g == 0:
        return MatchArrays(labels, positive, gt_index, np.zeros((a, 2)), np.zeros(a))

    ious = iou_matrix(anchors, gt_bounds)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(a), best_gt]
    positive = best_iou >= threshold
    gt_index = np.where(positive, best_gt, -1)

    # greedy one-to-one claims, highest IoU first
    order = np.lexsort((np.tile(np.arange(g), a), np.repeat(np.arange(a), g), -ious.reshape(-1)))
    anchor_taken = np.zeros(a, dtype=bool)
    gt_done = np.zeros(g, dtype=bool)
    for flat in order:
        if gt_done.all():
            break
        ai, gi = divmod(int(flat), g)
        if anchor_taken[ai] or gt_done[gi]:
            continue
        if ious[ai, gi] <= 0:
            break
        anchor_taken[ai] = True
        gt_done[gi] = True
        positive[ai] = True
        gt_index[ai] = gi

    matched = gt_index >= 0
    labels[matched] = gt_labels[gt_index[matched]]
    bounds = np.zeros((a, 2))
    bounds[matched] = gt_bounds[gt_index[matched]]
    target = best_iou.copy()
    target[matched] = ious[np.flatnonzero(matched), gt_index[matched]]
    return MatchArrays(labels, positive, gt_index, bounds, target)


def match(anchors: Sequence[Interval], ground_truths: Sequence[tuple[Interval, int]],
          threshold: float = POSITIVE_IOU) -> list[MatchResult]:
    arr = np.array([[x.start, x.end] for x in anchors], dtype=np.float64).reshape(-1, 2)
    gts = np.array([[iv.start, iv.end] for iv, _ in ground_truths], dtype=np.float64).reshape(-1, 2)
    m = match_arrays(arr, gts, [c for _, c in ground_truths], threshold)
    out = []
    for i in range(len(arr)):
        gt = ground_truths[m.gt_index[i]][0] if m.gt_index[i] >= 0 else None
        out.append(MatchResult(int(m.labels[i]), gt, float(m.target_iou[i]), bool(m.positive[i])))
    return out


def sample_for_loss(positive: np.ndarray, hardness: np.ndarray, negative_ratio: int = NEGATIVE_RATIO,
                    empty_negatives: int = EMPTY_NEGATIVES) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hard-negative mining.

    ``hardness`` is each anchor's background loss (-log p_background); the
    hardest negatives are taken, ties to the lower anchor index. Returns
    (cls_indices, conf_indices, reg_indices), each sorted ascending.
    """
    positive = np.asarray(positive, dtype=bool)
    hardness = np.asarray(hardness, dtype=np.float64)
    pos = np.flatnonzero(positive)
    neg = np.flatnonzero(~positive)
    quota = negative_ratio * len(pos) if len(pos) else empty_negatives
    ranked = neg[np.argsort(-hardness[neg], kind="stable")]
    chosen = np.sort(np.concatenate([pos, ranked[:quota]]))
    return chosen, chosen.copy(), pos


def anchor_geometry(anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 2)
    return 0.5 * (anchors[:, 0] + anchors[:, 1]), anchors[:, 1] - anchors[:, 0]


def decode_array(anchors: np.ndarray, offsets: np.ndarray, clip_to: float | None = None) -> np.ndarray:
    """center' = center + dc * width, width' = width * exp(dw); optional clip to [0, clip_to]."""
    c, w = anchor_geometry(anchors)
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    cc = c + offsets[:, 0] * w
    ww = w * np.exp(offsets[:, 1])
    out = np.stack([cc - ww / 2, cc + ww / 2], axis=1)
    if clip_to is not None:
        out = np.clip(out, 0.0, clip_to)
    return out


def decode(anchor: Interval, offsets: tuple[float, float], clip_to: float | None = None) -> Interval:
    (s, e), = decode_array(np.array([[anchor.start, anchor.end]]), np.array([offsets]), clip_to)
    return Interval(float(s), float(e))
