"""Feature/annotation files, fixed-length windowing, synthetic benchmark.

Feature file (``.mlft``), all integers int32 little-endian::

    b"MLFT1" | id_len | video_id (utf-8) | T_raw | D | T_raw*D float32 LE

Annotation file: text, one instance per line
``video_id<TAB>start<TAB>end<TAB>class_id``; lines starting with ``#`` are
comments. ``#@video<TAB>id`` pragmas register videos, so a video with no
instances survives a round trip.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .intervals import Interval

FEATURE_MAGIC = b"MLFT1"
FEATURE_SUFFIX = ".mlft"
VIDEO_PRAGMA = "#@video"
CLIP_KEEP_FRACTION = 0.75


class DataFormatError(ValueError):
    pass


class InfeasibleSpecError(ValueError):
    pass


@dataclass
class FeatureSequence:
    video_id: str
    features: np.ndarray  # (T_raw, D), snippet-major
    fps_equivalent: float = 1.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataFormatError(f"{self.video_id}: features must be (T_raw>=1, D), got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise DataFormatError(f"{self.video_id}: features contain NaN or Inf")

    @property
    def length(self) -> int:
        return self.features.shape[0]


@dataclass
class Annotation:
    video_id: str
    instances: list[tuple[Interval, int]] = field(default_factory=list)

    def validate(self, length: float, num_classes: int) -> None:
        for iv, c in self.instances:
            if iv.start < 0 or iv.end > length:
                raise DataFormatError(f"{self.video_id}: instance [{iv.start}, {iv.end}] outside [0, {length}]")
            if not 1 <= c <= num_classes:
                raise DataFormatError(f"{self.video_id}: class {c} outside 1..{num_classes}")


@dataclass(frozen=True)
class SyntheticSpec:
    num_videos: int = 20
    length: int = 256
    dim: int = 16
    num_classes: int = 3
    min_duration: int = 4
    max_duration: int = 48
    min_instances: int = 1
    max_instances: int = 4
    noise_sigma: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.num_videos < 0 or self.length < 1 or self.dim < 1 or self.num_classes < 1:
            raise InfeasibleSpecError(f"invalid sizes in {self}")
        if self.min_duration < 2 or self.max_duration < self.min_duration:
            raise InfeasibleSpecError(f"durations must satisfy 2 <= min <= max, got {self.min_duration}..{self.max_duration}")
        if self.min_instances < 0 or self.max_instances < self.min_instances:
            raise InfeasibleSpecError(f"bad instance count range {self.min_instances}..{self.max_instances}")
        if self.noise_sigma < 0:
            raise InfeasibleSpecError("noise_sigma must be nonnegative")
        need = self.max_instances * self.max_duration + 2 * max(self.max_instances - 1, 0)
        if need > self.length:
            raise InfeasibleSpecError(
                f"cannot place {self.max_instances} instances of up to {self.max_duration} snippets "
                f"with 2-snippet gaps in {self.length} snippets (needs {need})")


# ---------------------------------------------------------------- synthesis

def class_templates(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    u = rng.standard_normal((spec.num_classes, spec.dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec) -> tuple[list[FeatureSequence], list[Annotation]]:
    """Gaussian background with half-sine bumps along per-class directions.

    Feature values are rounded through float32 so a write/read cycle is
    lossless.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    templates = class_templates(spec, rng)
    width = len(str(max(spec.num_videos - 1, 0)))
    log_lo, log_hi = math.log(spec.min_duration), math.log(spec.max_duration)
    sequences, annotations = [], []
    for v in range(spec.num_videos):
        vid = f"video_{v:0{width}d}"
        feats = spec.noise_sigma * rng.standard_normal((spec.length, spec.dim))
        n = int(rng.integers(spec.min_instances, spec.max_instances + 1))
        durations = np.round(np.exp(rng.uniform(log_lo, log_hi, size=n))).astype(int)
        durations = np.clip(durations, spec.min_duration, spec.max_duration)
        classes = rng.integers(1, spec.num_classes + 1, size=n)
        slack = spec.length - int(durations.sum()) - 2 * max(n - 1, 0)
        # split the slack into n+1 gaps: sorted uniform cut points
        cuts = np.sort(rng.integers(0, slack + 1, size=n))
        extra = np.diff(np.concatenate([[0], cuts]))
        instances = []
        pos = 0
        for i in range(n):
            pos += int(extra[i]) + (2 if i else 0)
            d = int(durations[i])
            envelope = np.sin(np.pi * (np.arange(d) + 0.5) / d)
            feats[pos:pos + d] += envelope[:, None] * templates[classes[i] - 1][None, :]
            instances.append((Interval(float(pos), float(pos + d)), int(classes[i])))
            pos += d
        sequences.append(FeatureSequence(vid, feats.astype(np.float32).astype(np.float64)))
        annotations.append(Annotation(vid, instances))
    return sequences, annotations


# ---------------------------------------------------------------- windowing

def window_starts(length: int, window: int, stride: int) -> list[int]:
    if not 1 <= stride <= window:
        raise ValueError(f"stride must be in 1..{window} so windows cover every snippet, got {stride}")
    starts = []
    s = 0
    while s + window < length:
        starts.append(s)
        s += stride
    tail = max(length - window, 0)
    if not starts or starts[-1] != tail:
        starts.append(tail)
    return starts


def check_window_config(window: int, stride: int, max_duration: float) -> None:
    """Every instance must lie fully inside at least one window."""
    if stride > window - max_duration:
        raise ValueError(f"stride {stride} exceeds window {window} - max duration {max_duration}")


def clip_instances(instances: Iterable[tuple[Interval, int]], lo: float, hi: float,
                   keep_fraction: float = CLIP_KEEP_FRACTION) -> list[tuple[Interval, int]]:
    """Clip to [lo, hi], keep if >= keep_fraction survives, rebase to lo."""
    kept = []
    for iv, c in instances:
        s, e = max(iv.start, lo), min(iv.end, hi)
        if e > s and (e - s) >= keep_fraction * iv.length - 1e-9:
            kept.append((Interval(s - lo, e - lo), c))
    return kept


@dataclass
class Window:
    video_id: str
    offset: int
    features: np.ndarray  # (T, D), zero padded past the video end
    instances: list[tuple[Interval, int]]
    valid_length: int


def window(seq: FeatureSequence, ann: Annotation | None, length: int, stride: int,
           keep_fraction: float = CLIP_KEEP_FRACTION) -> list[Window]:
    out = []
    instances = ann.instances if ann is not None else []
    for s in window_starts(seq.length, length, stride):
        chunk = seq.features[s:s + length]
        valid = chunk.shape[0]
        if valid < length:
            chunk = np.concatenate([chunk, np.zeros((length - valid, chunk.shape[1]))], axis=0)
        out.append(Window(seq.video_id, s, chunk, clip_instances(instances, s, s + valid, keep_fraction), valid))
    return out


# ---------------------------------------------------------------- file formats

def dump_features(seq: FeatureSequence) -> bytes:
    vid = seq.video_id.encode("utf-8")
    t, d = seq.features.shape
    return b"".join([FEATURE_MAGIC, struct.pack("<i", len(vid)), vid, struct.pack("<ii", t, d),
                     np.ascontiguousarray(seq.features, dtype="<f4").tobytes()])


def parse_features(buf: bytes) -> FeatureSequence:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise DataFormatError(f"truncated feature file: need {n} bytes for {what} at byte offset {pos}, "
                                  f"only {len(buf) - pos} left")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    magic = take(len(FEATURE_MAGIC), "magic")
    if magic != FEATURE_MAGIC:
        raise DataFormatError(f"bad feature magic {magic!r} at byte offset 0")
    (n,) = struct.unpack("<i", take(4, "id length"))
    if n < 0:
        raise DataFormatError(f"negative id length at byte offset {pos - 4}")
    vid = take(n, "video id").decode("utf-8")
    t, d = struct.unpack("<ii", take(8, "shape"))
    if t < 1 or d < 1:
        raise DataFormatError(f"invalid shape ({t}, {d}) at byte offset {pos - 8}")
    values = np.frombuffer(take(4 * t * d, "feature values"), dtype="<f4").reshape(t, d)
    if pos != len(buf):
        raise DataFormatError(f"trailing bytes at byte offset {pos}")
    return FeatureSequence(vid, values.astype(np.float64))


def write_features(path: str | Path, seq: FeatureSequence) -> None:
    Path(path).write_bytes(dump_features(seq))


def read_features(path: str | Path) -> FeatureSequence:
    return parse_features(Path(path).read_bytes())


def format_annotations(annotations: Sequence[Annotation]) -> str:
    lines = ["# video_id\tstart\tend\tclass_id"]
    for ann in annotations:
        lines.append(f"{VIDEO_PRAGMA}\t{ann.video_id}")
        for iv, c in ann.instances:
            lines.append(f"{ann.video_id}\t{iv.start!r}\t{iv.end!r}\t{c}")
    return "\n".join(lines) + "\n"


def parse_annotations(text: str) -> list[Annotation]:
    by_video: dict[str, Annotation] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(VIDEO_PRAGMA):
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"line {lineno}: malformed video pragma")
            by_video.setdefault(parts[1], Annotation(parts[1]))
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataFormatError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        try:
            iv = Interval(float(parts[1]), float(parts[2]))
            c = int(parts[3])
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from exc
        by_video.setdefault(parts[0], Annotation(parts[0])).instances.append((iv, c))
    return list(by_video.values())


def write_annotations(path: str | Path, annotations: Sequence[Annotation]) -> None:
    Path(path).write_text(format_annotations(annotations))


def read_annotations(path: str | Path) -> list[Annotation]:
    return parse_annotations(Path(path).read_text())


# ---------------------------------------------------------------- dataset dirs

def write_dataset(root: str | Path, sequences: Sequence[FeatureSequence], annotations: Sequence[Annotation]) -> None:
    root = Path(root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    for seq in sequences:
        write_features(root / "features" / f"{seq.video_id}{FEATURE_SUFFIX}", seq)
    write_annotations(root / "annotations.tsv", annotations)


def read_dataset(root: str | Path) -> tuple[list[FeatureSequence], list[Annotation]]:
    root = Path(root)
    if not (root / "features").is_dir():
        raise FileNotFoundError(f"{root} has no features/ directory")
    sequences = [read_features(p) for p in sorted((root / "features").glob(f"*{FEATURE_SUFFIX}"))]
    ann_path = root / "annotations.tsv"
    by_id = {a.video_id: a for a in read_annotations(ann_path)} if ann_path.exists() else {}
    annotations = [by_id.get(s.video_id, Annotation(s.video_id)) for s in sequences]
    return sequences, annotations
