"""Slow, obviously-correct reference routines used by tests and selfcheck.

Each one is written against scalar ``iou`` with plain loops and shares no
code path with the vectorised implementation it checks.
"""
from __future__ import annotations

from typing import Sequence

from .intervals import Interval, iou


def match_oracle(anchors: Sequence[Interval], gts: Sequence[tuple[Interval, int]],
                 threshold: float = 0.5) -> list[tuple[int, int, bool]]:
    """(label, gt_index or -1, positive) per anchor."""
    result = []
    for a in anchors:
        best, best_j = 0.0, -1
        for j, (g, _) in enumerate(gts):
            o = iou(a, g)
            if best_j < 0 or o > best:
                best, best_j = o, j
        if best_j >= 0 and best >= threshold:
            result.append([gts[best_j][1], best_j, True])
        else:
            result.append([0, -1, False])
    pairs = sorted(((iou(a, g), i, j) for i, a in enumerate(anchors) for j, (g, _) in enumerate(gts)),
                   key=lambda x: (-x[0], x[1], x[2]))
    used_a, used_g = set(), set()
    for o, i, j in pairs:
        if o <= 0:
            break
        if i in used_a or j in used_g:
            continue
        used_a.add(i)
        used_g.add(j)
        result[i] = [gts[j][1], j, True]
    return [tuple(r) for r in result]


def nms_oracle_ok(candidates, kept, threshold: float) -> bool:
    """Check ``kept`` against the greedy-NMS definition by exhaustion.

    candidates / kept: sequences of (interval, score, rank_key); ``rank_key``
    orders candidates (lower = earlier).
    """
    ranked = sorted(candidates, key=lambda c: c[2])
    kept_keys = [k[2] for k in kept]
    if kept_keys != sorted(kept_keys) or len(set(kept_keys)) != len(kept_keys):
        return False
    keys = set(kept_keys)
    if not keys <= {c[2] for c in ranked}:
        return False
    for a in kept:
        for b in kept:
            if a[2] != b[2] and iou(a[0], b[0]) >= threshold:
                return False
    for c in ranked:
        if c[2] in keys:
            continue
        if not any(k[2] < c[2] and iou(k[0], c[0]) >= threshold for k in kept):
            return False
    return True


def ap_oracle(dets: Sequence[tuple[str, Interval, float]], gts: dict[str, list[Interval]], threshold: float) -> float:
    """AP = (1/#GT) * sum over true positives of the best precision at or below that rank."""
    num_gt = sum(len(v) for v in gts.values())
    if num_gt == 0:
        return float("nan")
    ranked = sorted(dets, key=lambda d: (-d[2], d[0], d[1].start))
    taken = {v: [False] * len(g) for v, g in gts.items()}
    tp = []
    for vid, interval, _ in ranked:
        options = [(iou(interval, g), -j) for j, g in enumerate(gts.get(vid, [])) if not taken[vid][j]]
        options = [o for o in options if o[0] >= threshold]
        if options:
            _, neg_j = max(options)
            taken[vid][-neg_j] = True
            tp.append(True)
        else:
            tp.append(False)
    precision = []
    hits = 0
    for k, t in enumerate(tp, 1):
        hits += t
        precision.append(hits / k)
    total = 0.0
    for k, t in enumerate(tp):
        if t:
            total += max(precision[k:])
    return total / num_gt
