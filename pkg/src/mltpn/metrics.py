"""Temporal detection mAP (all-point interpolated AP per class and IoU)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Annotation
from .detector import Detection
from .intervals import Interval, iou

THUMOS_THRESHOLDS = (0.3, 0.4, 0.5, 0.6, 0.7)
ACTIVITYNET_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def parse_thresholds(text: str) -> tuple[float, ...]:
    """``start:stop:step`` with inclusive stop, or a comma list."""
    if ":" in text:
        try:
            start, stop, step = (float(x) for x in text.split(":"))
        except ValueError as exc:
            raise ValueError(f"threshold range must be start:stop:step, got {text!r}") from exc
        if step <= 0 or stop < start:
            raise ValueError(f"bad threshold range {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        values = tuple(round(start + i * step, 10) for i in range(n))
    else:
        values = tuple(float(x) for x in text.split(",") if x.strip())
    if not values or any(not 0 < v <= 1 for v in values):
        raise ValueError(f"thresholds must lie in (0, 1], got {values}")
    return values


def _det_order(d: Detection):
    return (-d.score, d.video_id, d.interval.start)


def match_detections(detections: Sequence[Detection], ground_truths: Mapping[str, Sequence[Interval]],
                     threshold: float) -> np.ndarray:
    """TP flags in score order; each detection claims its best unclaimed GT."""
    claimed = {vid: np.zeros(len(g), dtype=bool) for vid, g in ground_truths.items()}
    flags = np.zeros(len(detections), dtype=bool)
    for i, d in enumerate(detections):
        gts = ground_truths.get(d.video_id, ())
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if claimed[d.video_id][j]:
                continue
            o = iou(d.interval, g)
            if o >= threshold and o > best:
                best, best_j = o, j
        if best_j >= 0:
            claimed[d.video_id][best_j] = True
            flags[i] = True
    return flags


def ap_from_flags(flags: np.ndarray, num_gt: int) -> float:
    if num_gt == 0:
        return math.nan
    if len(flags) == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # precision envelope, then area under the step curve
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def average_precision(detections: Iterable[Detection], ground_truths: Mapping[str, Sequence[Interval]],
                      iou_threshold: float) -> float:
    """AP of one class. NaN when the class has no ground truth."""
    dets = sorted(detections, key=_det_order)
    num_gt = sum(len(v) for v in ground_truths.values())
    return ap_from_flags(match_detections(dets, ground_truths, iou_threshold), num_gt)


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    classes: tuple[int, ...]
    ap: dict[tuple[int, float], float] = field(default_factory=dict)
    map: dict[float, float] = field(default_factory=dict)

    @property
    def average_map(self) -> float:
        vals = [self.map[t] for t in self.thresholds]
        return float(np.mean(vals)) if vals else math.nan

    def to_text(self) -> str:
        head = ["class"] + [f"{t:.2f}" for t in self.thresholds]
        rows = [head]
        for c in self.classes:
            rows.append([str(c)] + [_fmt(self.ap[(c, t)]) for t in self.thresholds])
        rows.append(["mAP"] + [_fmt(self.map[t]) for t in self.thresholds])
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
        lines.append(f"average mAP: {_fmt(self.average_map)}")
        return "\n".join(lines) + "\n"

    def to_kv(self) -> str:
        lines = []
        for t in self.thresholds:
            for c in self.classes:
                lines.append(f"ap.class{c}.iou{t:.2f} = {_fmt(self.ap[(c, t)])}")
        for t in self.thresholds:
            lines.append(f"map.iou{t:.2f} = {_fmt(self.map[t])}")
        lines.append(f"map.average = {_fmt(self.average_map)}")
        return "\n".join(lines) + "\n"

    def write(self, prefix: str | Path) -> tuple[Path, Path]:
        prefix = Path(prefix)
        txt, kv = prefix.with_suffix(".txt"), prefix.with_suffix(".kv")
        txt.write_text(self.to_text())
        kv.write_text(self.to_kv())
        return txt, kv


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else f"{x:.6f}"


def group_ground_truths(annotations: Iterable[Annotation]) -> dict[int, dict[str, list[Interval]]]:
    """class -> video -> intervals."""
    out: dict[int, dict[str, list[Interval]]] = {}
    for ann in annotations:
        for iv, c in ann.instances:
            out.setdefault(c, {}).setdefault(ann.video_id, []).append(iv)
    return out


def map_suite(detections: Iterable[Detection], annotations: Iterable[Annotation],
              thresholds: Sequence[float] = THUMOS_THRESHOLDS) -> EvalReport:
    """Per-class AP at every threshold; mAP averages classes with >= 1 GT."""
    gts = group_ground_truths(annotations)
    by_class: dict[int, list[Detection]] = {}
    for d in detections:
        by_class.setdefault(d.class_id, []).append(d)
    classes = tuple(sorted(gts))
    report = EvalReport(tuple(thresholds), classes)
    for t in report.thresholds:
        aps = []
        for c in classes:
            ap = average_precision(by_class.get(c, []), gts[c], t)
            report.ap[(c, t)] = ap
            aps.append(ap)
        report.map[t] = float(np.mean(aps)) if aps else math.nan
    return report
