"""The multi-level temporal pyramid detector.

Data flow for a batch of windows (B, T, D)::

    base convs (two stride-2 conv1d)  -> (B, c, t),  t = T/4
    transform (1 x t x c -> k x t x c)
    THM_1 .. THM_l, each fed by an inter-THM link from the previous one
        -> per THM: P decoder levels of (B, 128, t/2^j, c)
    MFM: per level concat over THMs (l*128), 1x1 reduce, residual block,
         channel attention; all MFM weights shared across levels
    heads: mean over c, then conv1d branches for class / IoU / offsets

The feature axis ``c`` is never convolved: every 2-D kernel is (k, 1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .anchors import DEFAULT_RATIOS, AnchorLayout
from .nn import Conv1d, Conv2d, Dense, Module
from .tensor import Tensor

INTERP_MODES = ("nearest", "linear")
BACKGROUND_PRIOR = 0.99


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 16
    feature_dim: int = 16
    base_length: int = 128
    k1: int = 64
    k2: int = 64
    num_thm: int = 6
    pyramid_levels: int = 3
    thm_channels: int = 128
    link_channels: int = 64
    mfm_channels: int = 256
    attention_reduction: int = 16
    anchor_ratios: tuple[float, ...] = DEFAULT_RATIOS
    num_classes: int = 3
    interp_mode: str = "nearest"

    def __post_init__(self):
        if self.k1 + self.k2 != self.thm_channels:
            raise ValueError(f"k1 + k2 = {self.k1 + self.k2} must equal thm_channels {self.thm_channels}")
        if self.num_thm < 1 or self.pyramid_levels < 1:
            raise ValueError("num_thm and pyramid_levels must be >= 1")
        if self.base_length % 2 ** (self.pyramid_levels + 2):
            raise ValueError(f"base_length {self.base_length} not divisible by 2^{self.pyramid_levels + 2}")
        if 2 * self.link_channels != self.thm_channels:
            raise ValueError("inter-THM link must split thm_channels into two equal halves")
        if self.interp_mode not in INTERP_MODES:
            raise ValueError(f"interp_mode must be one of {INTERP_MODES}, got {self.interp_mode!r}")
        if not self.anchor_ratios or self.num_classes < 1:
            raise ValueError("need at least one anchor ratio and one class")
        if self.mfm_channels % self.attention_reduction:
            raise ValueError("mfm_channels must be divisible by attention_reduction")

    @property
    def head_anchors(self) -> int:
        return len(self.anchor_ratios)

    @property
    def temporal_length(self) -> int:
        """t: length after the two stride-2 base convs."""
        return self.base_length // 4

    @property
    def level_lengths(self) -> tuple[int, ...]:
        t = self.temporal_length
        return tuple(t // 2 ** j for j in range(1, self.pyramid_levels + 1))

    def anchor_layout(self) -> AnchorLayout:
        return AnchorLayout(self.level_lengths, tuple(self.anchor_ratios), self.base_length)


@dataclass
class HeadOutputs:
    """Flat per-anchor predictions, level-major / cell-second / anchor-minor."""
    cls_logits: Tensor  # (B, A, C+1)
    conf: Tensor  # (B, A), sigmoid applied
    loc: Tensor  # (B, A, 2): (center offset, log width scale)
    shapes: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def class_probs(self) -> np.ndarray:
        z = self.cls_logits.data - self.cls_logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


class BaseConvs(Module):
    def __init__(self, rng, in_dim: int, out_dim: int):
        self.conv1 = Conv1d(rng, in_dim, out_dim, kernel=3, stride=2, padding=1)
        self.conv2 = Conv1d(rng, out_dim, out_dim, kernel=3, stride=2, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(self.conv2(T.relu(self.conv1(x))))


class Transform(Module):
    """Lift (t, c) to a (k1 + k2)-channel map; branch B runs at half rate."""

    def __init__(self, rng, k1: int, k2: int, mode: str):
        self.conv1 = Conv2d(rng, 1, k1, (3, 1), (1, 1), (1, 0))
        self.conv2 = Conv2d(rng, 1, k2, (3, 1), (2, 1), (1, 0))
        self._mode = mode

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] % 2:
            raise T.ShapeError(f"transform needs an even temporal length, got input {x.shape}")
        a = T.relu(self.conv1(x))
        b = T.upsample_temporal(T.relu(self.conv2(x)), 2, self._mode)
        return T.concat([a, b], axis=-3)


class THM(Module):
    """Encoder of stride-2 (3,1) convs; top-down decoder with 1x1 laterals."""

    def __init__(self, rng, channels: int, levels: int, mode: str):
        self.enc = [Conv2d(rng, channels, channels, (3, 1), (2, 1), (1, 0)) for _ in range(levels)]
        self.lateral = [Conv2d(rng, channels, channels, (1, 1), (1, 1), (0, 0)) for _ in range(levels - 1)]
        self._mode = mode

    def __call__(self, x: Tensor) -> list[Tensor]:
        levels = len(self.enc)
        if x.shape[-2] % 2 ** levels:
            raise T.ShapeError(f"THM with {levels} levels needs t divisible by {2 ** levels}, got input {x.shape}")
        encoded = []
        h = x
        for conv in self.enc:
            h = T.relu(conv(h))
            encoded.append(h)
        decoded = [encoded[-1]]
        for j in range(levels - 2, -1, -1):
            top = T.upsample_temporal(decoded[0], 2, self._mode)
            decoded.insert(0, T.relu(self.lateral[j](encoded[j]) + top))
        return decoded


class InterTHM(Module):
    def __init__(self, rng, channels: int, half: int, mode: str):
        self.reduce_base = Conv2d(rng, channels, half, (1, 1), (1, 1), (0, 0))
        self.reduce_top = Conv2d(rng, channels, half, (1, 1), (1, 1), (0, 0))
        self._mode = mode

    def __call__(self, base: Tensor, prev_top: Tensor) -> Tensor:
        up = T.upsample_temporal(prev_top, 2, self._mode)
        return T.concat([T.relu(self.reduce_base(base)), T.relu(self.reduce_top(up))], axis=-3)


class ChannelAttention(Module):
    def __init__(self, rng, channels: int, reduction: int):
        self.squeeze = Dense(rng, channels, channels // reduction)
        self.expand = Dense(rng, channels // reduction, channels)

    def __call__(self, x: Tensor) -> Tensor:
        pooled = T.mean(x, axes=(2, 3))
        gate = T.sigmoid(self.expand(T.relu(self.squeeze(pooled))))
        return T.scale(x, gate)


class MFM(Module):
    """Same-scale fusion over THMs; one set of weights serves every level."""

    def __init__(self, rng, in_channels: int, channels: int, reduction: int):
        self.reduce = Conv2d(rng, in_channels, channels, (1, 1), (1, 1), (0, 0))
        self.res1 = Conv2d(rng, channels, channels, (3, 1), (1, 1), (1, 0))
        self.res2 = Conv2d(rng, channels, channels, (3, 1), (1, 1), (1, 0))
        self.attention = ChannelAttention(rng, channels, reduction)

    def residual(self, x: Tensor) -> Tensor:
        return T.relu(x + self.res2(T.relu(self.res1(x))))

    def fuse_level(self, same_scale: Sequence[Tensor]) -> Tensor:
        x = T.relu(self.reduce(T.concat(list(same_scale), axis=1)))
        return self.attention(self.residual(x))

    def __call__(self, pyramids: Sequence[Sequence[Tensor]]) -> list[Tensor]:
        levels = len(pyramids[0])
        for p in pyramids:
            if len(p) != levels:
                raise T.ShapeError(f"THM pyramids disagree on level count: {levels} vs {len(p)}")
        return [self.fuse_level([p[j] for p in pyramids]) for j in range(levels)]


class Heads(Module):
    def __init__(self, rng, channels: int, num_classes: int, num_anchors: int):
        self.cls = Conv1d(rng, channels, (num_classes + 1) * num_anchors, kernel=3, padding=1)
        self.conf = Conv1d(rng, channels, num_anchors, kernel=3, padding=1)
        self.loc = Conv1d(rng, channels, 2 * num_anchors, kernel=3, padding=1)
        # class-major channel layout: channel k*N + n is class k of anchor n
        bias = np.zeros((num_classes + 1, num_anchors))
        bias[0] = np.log(BACKGROUND_PRIOR * num_classes / (1.0 - BACKGROUND_PRIOR))
        self.cls.bias.data = bias.reshape(-1)
        self._c = num_classes
        self._n = num_anchors

    def __call__(self, fused: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        x = T.mean(fused, axes=3)  # (B, ch, t')
        b, _, t = x.shape
        n, k = self._n, self._c + 1
        cls = T.transpose(T.reshape(self.cls(x), (b, k, n, t)), (0, 3, 2, 1))
        conf = T.transpose(T.reshape(T.sigmoid(self.conf(x)), (b, n, t)), (0, 2, 1))
        loc = T.transpose(T.reshape(self.loc(x), (b, 2, n, t)), (0, 3, 2, 1))
        return (T.reshape(cls, (b, t * n, k)), T.reshape(conf, (b, t * n)), T.reshape(loc, (b, t * n, 2)))


class MLTPN(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        cfg = config
        self.base = BaseConvs(rng, cfg.input_dim, cfg.feature_dim)
        self.transform = Transform(rng, cfg.k1, cfg.k2, cfg.interp_mode)
        self.thm = [THM(rng, cfg.thm_channels, cfg.pyramid_levels, cfg.interp_mode) for _ in range(cfg.num_thm)]
        self.link = [InterTHM(rng, cfg.thm_channels, cfg.link_channels, cfg.interp_mode)
                     for _ in range(cfg.num_thm - 1)]
        self.mfm = MFM(rng, cfg.num_thm * cfg.thm_channels, cfg.mfm_channels, cfg.attention_reduction)
        self.head = Heads(rng, cfg.mfm_channels, cfg.num_classes, cfg.head_anchors)
        self.assign_names()

    def prepare_input(self, features) -> np.ndarray:
        """(T, D) or (B, T, D) array -> zero-padded (B, T, D) float64 batch."""
        x = np.asarray(getattr(features, "features", features), dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.config.input_dim:
            raise T.ShapeError(f"expected (B, T, {self.config.input_dim}) features, got {x.shape}")
        length = self.config.base_length
        if x.shape[1] > length:
            raise T.ShapeError(f"input length {x.shape[1]} exceeds model length {length}; window it first")
        if x.shape[1] < length:
            x = np.concatenate([x, np.zeros((x.shape[0], length - x.shape[1], x.shape[2]))], axis=1)
        return x

    def __call__(self, features, record_shapes: bool = False) -> HeadOutputs:
        return self.forward(features, record_shapes)

    def forward(self, features, record_shapes: bool = False) -> HeadOutputs:
        shapes: dict[str, tuple[int, ...]] = {}

        def note(name, t):
            if record_shapes:
                shapes[name] = tuple(t.shape[1:])
            return t

        x = Tensor(self.prepare_input(features).transpose(0, 2, 1))  # (B, D, T)
        b = x.shape[0]
        base = note("base", self.base(x))  # (B, c, t)
        t, c = base.shape[2], base.shape[1]
        lifted = T.reshape(T.transpose(base, (0, 2, 1)), (b, 1, t, c))
        trans = note("transform", self.transform(lifted))
        pyramids = []
        inp = trans
        for i, thm in enumerate(self.thm):
            if i:
                inp = note(f"link.{i - 1}", self.link[i - 1](trans, pyramids[-1][0]))
            levels = thm(inp)
            for j, lv in enumerate(levels):
                note(f"thm.{i}.level.{j}", lv)
            pyramids.append(levels)
        if record_shapes:
            for j in range(len(pyramids[0])):
                shapes[f"mfm.concat.{j}"] = (sum(p[j].shape[1] for p in pyramids),) + tuple(pyramids[0][j].shape[2:])
        fused = [note(f"mfm.level.{j}", f) for j, f in enumerate(self.mfm(pyramids))]
        outs = [self.head(f) for f in fused]
        cls = T.concat([o[0] for o in outs], axis=1)
        conf = T.concat([o[1] for o in outs], axis=1)
        loc = T.concat([o[2] for o in outs], axis=1)
        note("cls", cls)
        note("conf", conf)
        note("loc", loc)
        return HeadOutputs(cls, conf, loc, shapes)
