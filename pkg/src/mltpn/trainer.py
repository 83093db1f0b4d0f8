"""Loss assembly, optimisation loop, lr schedule and early stopping."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .anchors import (NEGATIVE_RATIO, MatchArrays, anchor_array, anchor_geometry, decode_array, match_arrays,
                      sample_for_loss)
from .data import Window
from .intervals import (LossWeights, confidence_terms, cross_entropy_terms, giou_loss_terms, iou_matrix,
                        joint_loss, normalized_term)
from .model import MLTPN, HeadOutputs
from .optim import SGD, Adam

log = logging.getLogger(__name__)

CURVE_HEADER = "# epoch\ttrain_total\ttrain_cls\ttrain_conf\ttrain_reg\tval_total"
DEFAULT_LR = {"sgd": 0.001, "adam": 0.0001}


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"loss became {value} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "sgd"
    lr: Optional[float] = None  # None -> 0.001 for sgd, 0.0001 for adam
    momentum: float = 0.9
    weight_decay: float = 0.0001
    batch_size: int = 16
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int = 15
    max_epochs: int = 30
    early_stop_patience: int = 8
    seed: int = 0
    alpha1: float = 1.0
    alpha2: float = 10.0
    alpha3: float = 0.3
    negative_ratio: int = NEGATIVE_RATIO

    def __post_init__(self):
        if self.optimizer not in DEFAULT_LR:
            raise ValueError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch_size, max_epochs and early_stop_patience must be >= 1")
        LossWeights(self.alpha1, self.alpha2, self.alpha3)

    @property
    def base_lr(self) -> float:
        return DEFAULT_LR[self.optimizer] if self.lr is None else self.lr

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha1, self.alpha2, self.alpha3)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``: decayed once after lr_decay_epoch."""
        return self.base_lr * (self.lr_decay_factor if epoch > self.lr_decay_epoch else 1.0)


def make_optimizer(model: MLTPN, config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(model.parameters(), config.base_lr, config.momentum, config.weight_decay)
    return Adam(model.parameters(), config.base_lr, weight_decay=config.weight_decay)


@dataclass
class Sample:
    """A training window with its precomputed anchor matches."""
    features: np.ndarray  # (T, D)
    gt_bounds: np.ndarray  # (G, 2)
    match: MatchArrays


def prepare_samples(windows: Sequence[Window], model: MLTPN) -> list[Sample]:
    anchors = anchor_array(model.config.anchor_layout())
    out = []
    for w in windows:
        gts = np.array([[iv.start, iv.end] for iv, _ in w.instances], dtype=np.float64).reshape(-1, 2)
        labels = [c for _, c in w.instances]
        out.append(Sample(w.features, gts, match_arrays(anchors, gts, labels)))
    return out


@dataclass
class LossStats:
    total: float
    cls: float
    conf: float
    reg: float
    num_positive: int = 0


@dataclass
class LossPlan:
    """Everything the loss needs that is not differentiated: mined anchors and targets.

    Indices are into the flattened (batch * anchors) prediction axis.
    """
    cls_idx: np.ndarray
    cls_labels: np.ndarray
    conf_idx: np.ndarray
    conf_targets: np.ndarray
    reg_idx: np.ndarray
    reg_gt: np.ndarray  # (n_reg, 2)


def plan_loss(out: HeadOutputs, samples: Sequence[Sample], anchors: np.ndarray,
              negative_ratio: int = NEGATIVE_RATIO) -> LossPlan:
    """Mine per window, then pool; conf targets use the detached decoded boxes."""
    b, a, _ = out.cls_logits.shape
    z = out.cls_logits.data - out.cls_logits.data.max(axis=-1, keepdims=True)
    bg_loss = -(z[..., 0] - np.log(np.exp(z).sum(axis=-1)))
    predicted = decode_array(np.tile(anchors, (b, 1)), out.loc.data.reshape(-1, 2)).reshape(b, a, 2)

    parts: dict[str, list[np.ndarray]] = {k: [] for k in ("ci", "cl", "fi", "ft", "ri", "rg")}
    for i, s in enumerate(samples):
        m = s.match
        ci, fi, ri = sample_for_loss(m.positive, bg_loss[i], negative_ratio)
        target = np.zeros(len(fi))
        if len(s.gt_bounds):
            ious = iou_matrix(predicted[i, fi], s.gt_bounds)
            pos = m.positive[fi]
            target = ious.max(axis=1)
            target[pos] = ious[np.flatnonzero(pos), m.gt_index[fi][pos]]
        parts["ci"].append(i * a + ci)
        parts["cl"].append(m.labels[ci])
        parts["fi"].append(i * a + fi)
        parts["ft"].append(target)
        parts["ri"].append(i * a + ri)
        parts["rg"].append(m.gt_bounds[ri].reshape(-1, 2))
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return LossPlan(cat["ci"], cat["cl"], cat["fi"], cat["ft"], cat["ri"], cat["rg"])


def assemble_loss(out: HeadOutputs, plan: LossPlan, anchors: np.ndarray,
                  weights: LossWeights) -> tuple[T.Tensor, LossStats]:
    b, a, k = out.cls_logits.shape
    n_cls, n_conf, n_reg = len(plan.cls_idx), len(plan.conf_idx), len(plan.reg_idx)
    if n_reg == 0:
        weights = LossWeights(weights.alpha1, weights.alpha2, 0.0)

    cls_terms = cross_entropy_terms(T.reshape(out.cls_logits, (b * a, k))[plan.cls_idx], plan.cls_labels)
    conf_terms = confidence_terms(T.reshape(out.conf, (b * a,))[plan.conf_idx], plan.conf_targets)
    reg_terms = None
    if n_reg:
        centers, widths = anchor_geometry(anchors)
        loc = T.reshape(out.loc, (b * a, 2))
        anchor_of = plan.reg_idx % a
        aw = widths[anchor_of]
        center = centers[anchor_of] + loc[plan.reg_idx, 0] * aw
        half = T.exp(loc[plan.reg_idx, 1]) * (aw / 2)
        reg_terms = giou_loss_terms(center - half, center + half, plan.reg_gt[:, 0], plan.reg_gt[:, 1])

    loss = joint_loss(cls_terms, conf_terms, reg_terms, weights, n_cls, n_conf, n_reg)
    cls_v, conf_v, reg_v = (normalized_term(cls_terms, n_cls), normalized_term(conf_terms, n_conf),
                            normalized_term(reg_terms, n_reg))
    total = weights.alpha1 * cls_v + weights.alpha2 * conf_v + weights.alpha3 * reg_v
    return loss, LossStats(total, cls_v, conf_v, reg_v, n_reg)


def batch_loss(model: MLTPN, samples: Sequence[Sample], weights: LossWeights,
               negative_ratio: int = NEGATIVE_RATIO) -> tuple[T.Tensor, LossStats]:
    """Joint loss of one batch; samples are mined per window then pooled."""
    anchors = anchor_array(model.config.anchor_layout())
    out = model(np.stack([s.features for s in samples]))
    return assemble_loss(out, plan_loss(out, samples, anchors, negative_ratio), anchors, weights)


def _batches(n: int, batch_size: int, order: np.ndarray) -> list[np.ndarray]:
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _mean_stats(stats: Sequence[LossStats]) -> LossStats:
    return LossStats(*(float(np.mean([getattr(s, f) for s in stats])) for f in ("total", "cls", "conf", "reg")),
                     num_positive=int(sum(s.num_positive for s in stats)))


def train_epoch(model: MLTPN, optimizer, samples: Sequence[Sample], config: TrainConfig, epoch: int = 1) -> LossStats:
    """One shuffled pass; the shuffle is seeded by (seed, epoch)."""
    if not samples:
        raise ValueError("empty training set")
    order = np.random.default_rng([config.seed, epoch]).permutation(len(samples))
    stats = []
    for bi, idx in enumerate(_batches(len(samples), config.batch_size, order)):
        loss, st = batch_loss(model, [samples[i] for i in idx], config.weights, config.negative_ratio)
        if not math.isfinite(st.total):
            raise DivergenceError(epoch, bi, st.total)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        stats.append(st)
    return _mean_stats(stats)


def evaluate_loss(model: MLTPN, samples: Sequence[Sample], config: TrainConfig) -> LossStats:
    if not samples:
        raise ValueError("empty evaluation set")
    stats = []
    with T.no_grad():
        for idx in _batches(len(samples), config.batch_size, np.arange(len(samples))):
            stats.append(batch_loss(model, [samples[i] for i in idx], config.weights, config.negative_ratio)[1])
    return _mean_stats(stats)


@dataclass
class EpochRecord:
    epoch: int
    train: LossStats
    val_total: float
    lr: float

    def line(self) -> str:
        t = self.train
        return "\t".join([str(self.epoch)] + [f"{v:.10f}" for v in (t.total, t.cls, t.conf, t.reg, self.val_total)])


@dataclass
class FitResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_val: float
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False

    def curves_text(self) -> str:
        return "\n".join([CURVE_HEADER] + [r.line() for r in self.history]) + "\n"


def fit(model: MLTPN, train_samples: Sequence[Sample], val_samples: Sequence[Sample], config: TrainConfig,
        out_dir: str | Path | None = None, start_epoch: int = 1,
        best_so_far: tuple[dict[str, np.ndarray], int, float] | None = None) -> FitResult:
    """Train until max_epochs or early stop on validation loss.

    The model is left holding the best-validation parameters. With
    ``out_dir`` set, ``checkpoint.mltpn`` (best), ``last.mltpn``,
    ``state.txt`` and ``curves.txt`` are rewritten after every epoch.
    ``best_so_far`` carries (state, epoch, val) over from a resumed run.
    """
    if not train_samples or not val_samples:
        raise ValueError("fit needs non-empty training and validation sets")
    optimizer = make_optimizer(model, config)
    best_state, best_epoch, best_val = best_so_far or (model.state_dict(), 0, math.inf)
    history: list[EpochRecord] = []
    stale = 0
    stopped = False
    for epoch in range(start_epoch, config.max_epochs + 1):
        optimizer.lr = config.lr_at(epoch)
        tr = train_epoch(model, optimizer, train_samples, config, epoch)
        val = evaluate_loss(model, val_samples, config).total
        history.append(EpochRecord(epoch, tr, val, optimizer.lr))
        log.info("epoch %d lr %.2g train %.5f (cls %.5f conf %.5f reg %.5f) val %.5f",
                 epoch, optimizer.lr, tr.total, tr.cls, tr.conf, tr.reg, val)
        if val < best_val:
            best_state, best_epoch, best_val = model.state_dict(), epoch, val
            stale = 0
        else:
            stale += 1
        if out_dir is not None:
            write_fit_outputs(out_dir, FitResult(best_state, best_epoch, best_val, history), model.state_dict(),
                              append_from=start_epoch)
        if stale >= config.early_stop_patience:
            stopped = True
            break
    model.load_state_dict(best_state)
    return FitResult(best_state, best_epoch, best_val, history, stopped)


def write_fit_outputs(out_dir: str | Path, result: FitResult, last_state: dict[str, np.ndarray],
                      append_from: int = 1) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(out / "checkpoint.mltpn", result.best_state)
    checkpoint.save(out / "last.mltpn", last_state)
    last = result.history[-1].epoch if result.history else append_from - 1
    (out / "state.txt").write_text(f"train.last_epoch = {last}\ntrain.best_epoch = {result.best_epoch}\n"
                                   f"train.best_val = {result.best_val!r}\n")
    curves = out / "curves.txt"
    if append_from > 1 and curves.exists():
        kept = [ln for ln in curves.read_text().splitlines()
                if ln.startswith("#") or int(ln.split("\t", 1)[0]) < append_from]
        text = "\n".join(kept + [r.line() for r in result.history]) + "\n"
    else:
        text = result.curves_text()
    curves.write_text(text)
