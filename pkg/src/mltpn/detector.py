"""Head outputs -> scored, per-class NMS-filtered detections."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .anchors import anchor_array, decode_array
from .data import window
from .intervals import Interval, iou

NMS_THRESHOLD = 0.2
SCORE_FLOOR = 0.01
# shorter detections could collapse when written with 3 decimals
MIN_OUTPUT_LENGTH = 0.01
HEADER = "# video_id\tstart\tend\tclass_id\tscore"


@dataclass(frozen=True)
class Detection:
    video_id: str
    interval: Interval
    class_id: int
    score: float
    anchor_index: int = -1


def decode_predictions(class_probs: np.ndarray, conf: np.ndarray, loc: np.ndarray, anchors: np.ndarray,
                       length: float, video_id: str = "", score_floor: float = SCORE_FLOOR) -> list[Detection]:
    """One window's outputs: probs (A, C+1), conf (A,), loc (A, 2), anchors (A, 2).

    score = P(class) * predicted IoU. Output order: anchor ascending, then
    class ascending.
    """
    class_probs = np.asarray(class_probs, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    loc = np.asarray(loc, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    n = len(anchors)
    if class_probs.shape[0] != n or conf.shape != (n,) or loc.shape != (n, 2):
        raise ValueError(f"misaligned predictions: probs {class_probs.shape}, conf {conf.shape}, "
                         f"loc {loc.shape}, anchors {anchors.shape}")
    scores = class_probs[:, 1:] * conf[:, None]
    bounds = decode_array(anchors, loc, clip_to=length)
    out = []
    for a, k in zip(*np.nonzero(scores >= score_floor)):
        s, e = bounds[a]
        if e - s >= MIN_OUTPUT_LENGTH:
            out.append(Detection(video_id, Interval(float(s), float(e)), int(k) + 1, float(scores[a, k]), int(a)))
    return out


def _rank_key(d: Detection):
    return (-d.score, d.interval.start, d.anchor_index)


def nms(detections: Sequence[Detection], threshold: float = NMS_THRESHOLD) -> list[Detection]:
    """Greedy NMS for one class of one video.

    Keeps a detection iff its IoU with every already-kept detection is
    below ``threshold``.
    """
    kept: list[Detection] = []
    for d in sorted(detections, key=_rank_key):
        if all(iou(d.interval, k.interval) < threshold for k in kept):
            kept.append(d)
    return kept


def per_class_nms(detections: Iterable[Detection], threshold: float = NMS_THRESHOLD,
                  top_k: int | None = None) -> list[Detection]:
    groups: dict[tuple[str, int], list[Detection]] = {}
    for d in detections:
        groups.setdefault((d.video_id, d.class_id), []).append(d)
    out = []
    for key in sorted(groups):
        group = sorted(groups[key], key=_rank_key)
        if top_k is not None:
            group = group[:top_k]
        out.extend(nms(group, threshold))
    return sort_for_output(out)


def sort_for_output(detections: Iterable[Detection]) -> list[Detection]:
    return sorted(detections, key=lambda d: (d.video_id, -d.score, d.interval.start, d.class_id))


def format_detections(detections: Iterable[Detection]) -> str:
    lines = [HEADER]
    for d in sort_for_output(detections):
        lines.append(f"{d.video_id}\t{d.interval.start:.3f}\t{d.interval.end:.3f}\t{d.class_id}\t{d.score:.6f}")
    return "\n".join(lines) + "\n"


def parse_detections(text: str) -> list[Detection]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: expected 5 tab-separated fields, got {len(parts)}")
        out.append(Detection(parts[0], Interval(float(parts[1]), float(parts[2])), int(parts[3]), float(parts[4])))
    return out


def write_detections(path: str | Path, detections: Iterable[Detection]) -> None:
    Path(path).write_text(format_detections(detections))


def read_detections(path: str | Path) -> list[Detection]:
    return parse_detections(Path(path).read_text())


def run_detector(model, sequences, stride: int | None = None, batch_size: int = 16,
                 score_floor: float = SCORE_FLOOR, nms_threshold: float = NMS_THRESHOLD,
                 top_k: int | None = None) -> list[Detection]:
    """Window every sequence, decode each window, merge into video time, NMS."""
    length = model.config.base_length
    stride = stride or length // 2
    anchors = anchor_array(model.config.anchor_layout())
    windows = [w for seq in sequences for w in window(seq, None, length, stride)]
    merged = []
    with T.no_grad():
        for i in range(0, len(windows), batch_size):
            chunk = windows[i:i + batch_size]
            out = model(np.stack([w.features for w in chunk]))
            probs = out.class_probs()
            for j, w in enumerate(chunk):
                for d in decode_predictions(probs[j], out.conf.data[j], out.loc.data[j], anchors,
                                            w.valid_length, w.video_id, score_floor):
                    merged.append(Detection(d.video_id, d.interval.shifted(w.offset), d.class_id, d.score,
                                            d.anchor_index))
    return per_class_nms(merged, nms_threshold, top_k)
