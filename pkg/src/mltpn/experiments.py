"""Desk-scale experiments on synthetic data: overfit, generalization, THM ablation, determinism.

Shared by the scripts in ``scripts/`` and by the acceptance suite so both
run exactly the same protocol.
"""
from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .config import dumps
from .data import Annotation, FeatureSequence, SyntheticSpec, generate_synthetic, window
from .detector import run_detector
from .metrics import map_suite
from .model import MLTPN, ModelConfig
from .trainer import TrainConfig, fit, make_optimizer, prepare_samples, train_epoch

log = logging.getLogger(__name__)

# 40 train / 10 validation videos, instances of 4..40 snippets
BENCHMARK_SPEC = SyntheticSpec(num_videos=50, length=256, num_classes=3, min_duration=4, max_duration=40,
                               max_instances=5, noise_sigma=0.1, seed=7)
BENCHMARK_TRAIN = TrainConfig(optimizer="adam", lr=0.001, batch_size=8, max_epochs=90, lr_decay_epoch=60,
                              early_stop_patience=10)
OVERFIT_SPEC = SyntheticSpec(num_videos=8, length=128, num_classes=3, min_duration=4, max_duration=40,
                             max_instances=3, noise_sigma=0.1, seed=1)
OVERFIT_MODEL = ModelConfig(num_thm=2, pyramid_levels=2)
OVERFIT_TRAIN = TrainConfig(optimizer="adam", lr=0.001, batch_size=8, max_epochs=300, lr_decay_epoch=1000)


def windows_to_samples(seqs: Sequence[FeatureSequence], anns: Sequence[Annotation], model: MLTPN,
                       stride: int | None = None):
    length = model.config.base_length
    stride = stride or length // 2
    return prepare_samples([w for s, a in zip(seqs, anns) for w in window(s, a, length, stride)], model)


def map_at(model: MLTPN, seqs, anns, threshold: float = 0.5) -> float:
    return map_suite(run_detector(model, seqs), anns, (threshold,)).map[threshold]


# ---------------------------------------------------------------- overfit

@dataclass
class OverfitResult:
    epochs: int
    first_loss: float
    last_loss: float
    train_map: float
    seconds: float
    trace: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, loss, mAP@0.5)

    @property
    def loss_reduction(self) -> float:
        return 1.0 - self.last_loss / self.first_loss


def overfit(spec: SyntheticSpec = OVERFIT_SPEC, model_config: ModelConfig = OVERFIT_MODEL,
            config: TrainConfig = OVERFIT_TRAIN, target_map: float = 0.9, target_reduction: float = 0.9,
            check_every: int = 10, seed: int = 0) -> OverfitResult:
    """Train on the training set itself until both targets hold or the epoch budget runs out."""
    seqs, anns = generate_synthetic(spec)
    model = MLTPN(model_config, seed=seed)
    samples = windows_to_samples(seqs, anns, model)
    opt = make_optimizer(model, config)
    start = time.perf_counter()
    first = loss = float("nan")
    m, trace = 0.0, []
    for epoch in range(1, config.max_epochs + 1):
        loss = train_epoch(model, opt, samples, config, epoch).total
        if epoch == 1:
            first = loss
        if epoch % check_every == 0 or epoch == config.max_epochs:
            m = map_at(model, seqs, anns)
            trace.append((epoch, loss, m))
            log.info("overfit epoch %d loss %.5f mAP@0.5 %.3f", epoch, loss, m)
            if m >= target_map and loss <= (1 - target_reduction) * first:
                break
    return OverfitResult(epoch, first, loss, m, time.perf_counter() - start, trace)


# ---------------------------------------------------------------- generalization

@dataclass
class BenchmarkResult:
    model_config: ModelConfig
    best_epoch: int
    best_val: float
    first_val: float
    train_map: float
    val_map: float
    seconds: float
    curves: str


@functools.lru_cache(maxsize=None)  # runs are bit-reproducible, so a repeat call can reuse the result
def benchmark(model_config: ModelConfig = ModelConfig(), config: TrainConfig = BENCHMARK_TRAIN,
              spec: SyntheticSpec = BENCHMARK_SPEC, num_val: int = 10, seed: int = 0) -> BenchmarkResult:
    """Fit on the first videos, early-stop on the last ``num_val``, score both splits at mAP@0.5."""
    seqs, anns = generate_synthetic(spec)
    tr, va = (seqs[:-num_val], anns[:-num_val]), (seqs[-num_val:], anns[-num_val:])
    model = MLTPN(model_config, seed=seed)
    start = time.perf_counter()
    res = fit(model, windows_to_samples(*tr, model), windows_to_samples(*va, model), config)
    return BenchmarkResult(model_config, res.best_epoch, res.best_val, res.history[0].val_total,
                           map_at(model, *tr), map_at(model, *va), time.perf_counter() - start, res.curves_text())


# ---------------------------------------------------------------- ablation

def thm_ablation(out_dir: str | Path, counts: Sequence[int] = (1, 6), config: TrainConfig = BENCHMARK_TRAIN,
                 spec: SyntheticSpec = BENCHMARK_SPEC, seed: int = 0) -> dict[int, BenchmarkResult]:
    """Benchmark one model per THM count; write ``thm_ablation.txt`` and ``.kv``."""
    results = {}
    for n in counts:
        results[n] = benchmark(replace(ModelConfig(), num_thm=n), config, spec, seed=seed)
        log.info("num_thm %d: val mAP@0.5 %.4f", n, results[n].val_map)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["num_thm\tparams\tbest_epoch\tbest_val_loss\ttrain_map@0.5\tval_map@0.5\tseconds"]
    kv = []
    for n, r in results.items():
        params = MLTPN(r.model_config, seed=0).num_parameters()
        rows.append(f"{n}\t{params}\t{r.best_epoch}\t{r.best_val:.6f}\t{r.train_map:.6f}\t{r.val_map:.6f}\t"
                    f"{r.seconds:.0f}")
        kv.append(f"ablation.thm{n}.val_map50 = {r.val_map:.6f}")
        kv.append(f"ablation.thm{n}.train_map50 = {r.train_map:.6f}")
    (out / "thm_ablation.txt").write_text("\n".join(rows) + "\n")
    (out / "thm_ablation.kv").write_text("\n".join(kv) + "\n" + dumps(config, "train") + dumps(spec, "synth"))
    return results


# ---------------------------------------------------------------- determinism

PIPELINE_FILES = ("run/curves.txt", "run/checkpoint.mltpn", "detections.tsv", "report.txt", "report.kv")


def cli_pipeline(root: str | Path, epochs: int = 3) -> dict[str, bytes]:
    """synth -> train -> detect -> eval through the command line; returns the output bytes."""
    from .cli import main
    from .selfcheck import TINY_CONFIG

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "synth.cfg").write_text("synth.num_videos = 8\nsynth.length = 64\nsynth.dim = 4\n"
                                    "synth.max_duration = 10\nsynth.max_instances = 2\n")
    (root / "model.cfg").write_text(dumps(TINY_CONFIG, "model"))
    steps = [
        ["synth", "--spec", str(root / "synth.cfg"), "--out", str(root / "data")],
        ["train", "--data", str(root / "data"), "--out", str(root / "run"), "--config", str(root / "model.cfg"),
         "--optimizer", "adam", "--lr", "0.003", "--batch-size", "4", "--max-epochs", str(epochs), "--stride", "16"],
        ["detect", "--checkpoint", str(root / "run" / "checkpoint.mltpn"), "--data", str(root / "data"),
         "--out", str(root / "detections.tsv"), "--score-floor", "0"],
        ["eval", "--detections", str(root / "detections.tsv"), "--annotations", str(root / "data" / "annotations.tsv"),
         "--out", str(root / "report")],
    ]
    for argv in steps:
        code = main(argv)
        if code != 0:
            raise RuntimeError(f"{argv[0]} exited with {code}")
    return {name: (root / name).read_bytes() for name in PIPELINE_FILES}
