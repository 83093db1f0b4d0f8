"""Command line: synth, train, detect, eval, selfcheck.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure (divergence, failed self-check). Every command validates its
inputs before creating any output file.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import checkpoint
from . import config as cfgio
from .data import (DataFormatError, InfeasibleSpecError, SyntheticSpec, check_window_config, generate_synthetic,
                   read_annotations, read_dataset, window, write_dataset)
from .detector import NMS_THRESHOLD, SCORE_FLOOR, read_detections, run_detector, write_detections
from .metrics import map_suite, parse_thresholds
from .model import MLTPN, ModelConfig
from .trainer import DivergenceError, TrainConfig, fit, prepare_samples

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_NAME = "config.txt"

log = logging.getLogger("mltpn")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2, which we reserve for data errors
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def write_manifest(path: Path, command: str, args: argparse.Namespace, extra: dict[str, str] | None = None) -> None:
    lines = [f"manifest.command = {command}",
             f"manifest.timestamp = {datetime.datetime.now(datetime.timezone.utc).isoformat(timespec='seconds')}"]
    for key, value in sorted(vars(args).items()):
        if key != "func":
            lines.append(f"manifest.arg.{key} = {value}")
    for key, value in (extra or {}).items():
        lines.append(f"manifest.{key} = {value}")
    path.write_text("\n".join(lines) + "\n")


def _read_text_config(path: str | None) -> str:
    if path is None:
        return ""
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} not found")
    return p.read_text()


def _load_dataset(path: str | None, what: str):
    if path is None:
        raise UsageError(f"--{what} is required")
    root = Path(path)
    if not root.is_dir():
        raise UsageError(f"{what} directory {path} does not exist")
    try:
        return read_dataset(root)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    except (DataFormatError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _with_overrides(obj, **overrides):
    return dataclasses.replace(obj, **{k: v for k, v in overrides.items() if v is not None})


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    text = _read_text_config(args.spec)
    try:
        spec = _with_overrides(cfgio.loads(SyntheticSpec, text, "synth"), seed=args.seed,
                               num_videos=args.num_videos)
        seqs, anns = generate_synthetic(spec)
    except InfeasibleSpecError as exc:
        raise DataError(f"infeasible synthetic spec: {exc}") from exc
    out = Path(args.out)
    write_dataset(out, seqs, anns)
    (out / CONFIG_NAME).write_text(cfgio.dumps(spec, "synth"))
    write_manifest(out / "manifest.txt", "synth", args)
    print(f"wrote {len(seqs)} videos to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train

def _split(seqs, anns, fraction):
    n_val = max(1, int(round(len(seqs) * fraction)))
    if len(seqs) - n_val < 1:
        raise DataError(f"need at least 2 videos to split off validation, got {len(seqs)}")
    return (seqs[:-n_val], anns[:-n_val]), (seqs[-n_val:], anns[-n_val:])


def _check_data(seqs, anns, model_cfg: ModelConfig, stride: int, what: str) -> None:
    if not seqs:
        raise DataError(f"{what} set is empty")
    for s, a in zip(seqs, anns):
        if s.features.shape[1] != model_cfg.input_dim:
            raise DataError(f"{s.video_id}: feature dim {s.features.shape[1]} != model.input_dim "
                            f"{model_cfg.input_dim}")
        try:
            a.validate(s.length, model_cfg.num_classes)
        except DataFormatError as exc:
            raise DataError(str(exc)) from exc
    longest = max((iv.length for a in anns for iv, _ in a.instances), default=0.0)
    try:
        check_window_config(model_cfg.base_length, stride, longest)
    except ValueError as exc:
        raise UsageError(f"--stride: {exc}") from exc


def _read_state(out: Path) -> dict[str, str]:
    path = out / "state.txt"
    if not path.is_file():
        raise UsageError(f"--resume: {path} not found")
    return cfgio.parse_pairs(path.read_text())


def cmd_train(args) -> int:
    out = Path(args.out)
    text = _read_text_config(args.config)
    if args.resume:
        if args.config is None and (out / CONFIG_NAME).is_file():
            text = (out / CONFIG_NAME).read_text()
    try:
        model_cfg = cfgio.loads(ModelConfig, text, "model")
        train_cfg = _with_overrides(cfgio.loads(TrainConfig, text, "train"), optimizer=args.optimizer, lr=args.lr,
                                    batch_size=args.batch_size, max_epochs=args.max_epochs, seed=args.seed,
                                    early_stop_patience=args.patience)
    except (cfgio.ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    stride = args.stride or model_cfg.base_length // 2

    seqs, anns = _load_dataset(args.data, "data")
    if args.val is not None:
        train_set, val_set = (seqs, anns), _load_dataset(args.val, "val")
    else:
        train_set, val_set = _split(seqs, anns, args.val_fraction)
    _check_data(*train_set, model_cfg, stride, "training")
    _check_data(*val_set, model_cfg, stride, "validation")

    start_epoch, best = 1, None
    model = MLTPN(model_cfg, seed=train_cfg.seed)
    if args.resume:
        state = _read_state(out)
        try:
            start_epoch = int(state["train.last_epoch"]) + 1
            best_state = checkpoint.load(out / "checkpoint.mltpn")
            model.load_state_dict(checkpoint.load(out / "last.mltpn"))
            best = (best_state, int(state["train.best_epoch"]), float(state["train.best_val"]))
        except (KeyError, ValueError, OSError, checkpoint.CheckpointError) as exc:
            raise DataError(f"--resume: cannot restore from {out}: {exc}") from exc
        if start_epoch > train_cfg.max_epochs:
            raise UsageError(f"--resume: already trained {start_epoch - 1} epochs; raise --max-epochs")

    def samples(seqs_, anns_):
        return prepare_samples([w for s, a in zip(seqs_, anns_) for w in window(s, a, model_cfg.base_length, stride)],
                               model)

    train_samples, val_samples = samples(*train_set), samples(*val_set)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(cfgio.dumps(model_cfg, "model") + cfgio.dumps(train_cfg, "train"))
    write_manifest(out / ("manifest.txt" if start_epoch == 1 else f"manifest.resume{start_epoch}.txt"), "train", args,
                   {"train_windows": str(len(train_samples)), "val_windows": str(len(val_samples)),
                    "start_epoch": str(start_epoch)})
    try:
        result = fit(model, train_samples, val_samples, train_cfg, out_dir=out, start_epoch=start_epoch,
                     best_so_far=best)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"best epoch {result.best_epoch}, validation loss {result.best_val:.6f}; outputs in {out}")
    return EXIT_OK


# ---------------------------------------------------------------- detect

def _load_model(ckpt: str, config_path: str | None) -> MLTPN:
    ck = Path(ckpt)
    if not ck.is_file():
        raise UsageError(f"checkpoint {ckpt} not found")
    cfg_file = Path(config_path) if config_path else ck.parent / CONFIG_NAME
    if not cfg_file.is_file():
        raise UsageError(f"model config {cfg_file} not found; pass --config")
    try:
        model_cfg = cfgio.loads(ModelConfig, cfg_file.read_text(), "model")
    except (cfgio.ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    model = MLTPN(model_cfg, seed=0)
    try:
        model.load_state_dict(checkpoint.load(ck))
    except (checkpoint.CheckpointError, KeyError, ValueError) as exc:
        raise DataError(f"{ckpt}: {exc}") from exc
    return model


def cmd_detect(args) -> int:
    if not 0 < args.nms_threshold <= 1 or not 0 <= args.score_floor <= 1:
        raise UsageError("--nms-threshold must be in (0, 1] and --score-floor in [0, 1]")
    model = _load_model(args.checkpoint, args.config)
    seqs, _ = _load_dataset(args.data, "data")
    for s in seqs:
        if s.features.shape[1] != model.config.input_dim:
            raise DataError(f"{s.video_id}: feature dim {s.features.shape[1]} != model input {model.config.input_dim}")
    stride = args.stride or model.config.base_length // 2
    if not 1 <= stride <= model.config.base_length:
        raise UsageError(f"--stride must be in 1..{model.config.base_length}")
    dets = run_detector(model, seqs, stride=stride, score_floor=args.score_floor, nms_threshold=args.nms_threshold,
                        top_k=args.top_k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_detections(out, dets)
    write_manifest(out.with_name(out.name + ".manifest.txt"), "detect", args, {"detections": str(len(dets))})
    print(f"wrote {len(dets)} detections for {len(seqs)} videos to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    try:
        thresholds = parse_thresholds(args.thresholds)
    except ValueError as exc:
        raise UsageError(f"--thresholds: {exc}") from exc
    for path in (args.detections, args.annotations):
        if not Path(path).is_file():
            raise UsageError(f"{path} not found")
    try:
        dets = read_detections(args.detections)
        anns = read_annotations(args.annotations)
    except (DataFormatError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    report = map_suite(dets, anns, thresholds)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    report.write(prefix)
    write_manifest(prefix.with_name(prefix.name + ".manifest.txt"), "eval", args)
    print(report.to_text(), end="")
    return EXIT_OK


# ---------------------------------------------------------------- selfcheck

def cmd_selfcheck(args) -> int:
    from .selfcheck import run_checks

    results = run_checks(args.checkpoint, seed=args.seed)
    for r in results:
        print(r.line())
    ok = all(r.ok for r in results)
    print("selfcheck passed" if ok else "selfcheck FAILED")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mltpn", description="Multi-level temporal pyramid action detector.")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic feature/annotation dataset")
    s.add_argument("--spec", help="key = value file with synth.* keys (defaults otherwise)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="override synth.seed")
    s.add_argument("--num-videos", type=int, help="override synth.num_videos")
    s.set_defaults(func=cmd_synth)

    d = TrainConfig()
    t = sub.add_parser("train", help="train a model",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    t.add_argument("--data", help="dataset directory (features/ + annotations.tsv)")
    t.add_argument("--val", help="validation dataset directory; default: split off --val-fraction of --data")
    t.add_argument("--val-fraction", type=float, default=0.2, help="share of videos held out when --val is absent")
    t.add_argument("--out", required=True, help="run directory for checkpoint, curves, config")
    t.add_argument("--config", help="key = value file with model.* and train.* keys")
    t.add_argument("--optimizer", choices=("sgd", "adam"), help=f"default {d.optimizer}")
    t.add_argument("--lr", type=float, help="default 0.001 for sgd, 0.0001 for adam")
    t.add_argument("--batch-size", type=int, help=f"default {d.batch_size}")
    t.add_argument("--max-epochs", type=int, help=f"default {d.max_epochs}")
    t.add_argument("--patience", type=int, help=f"early-stop patience, default {d.early_stop_patience}")
    t.add_argument("--seed", type=int, help=f"default {d.seed}")
    t.add_argument("--stride", type=int, help="window stride in snippets; default half the model length")
    t.add_argument("--resume", action="store_true", help="continue the run in --out from its last epoch")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("detect", help="run a trained model over a dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="model config; default: config.txt next to the checkpoint")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--out", required=True, help="detection file to write")
    e.add_argument("--nms-threshold", type=float, default=NMS_THRESHOLD, help="per-class NMS IoU threshold")
    e.add_argument("--score-floor", type=float, default=SCORE_FLOOR, help="drop scores below this")
    e.add_argument("--stride", type=int, help="window stride; default half the model length")
    e.add_argument("--top-k", type=int, help="cap per video and class before NMS (default: no cap)")
    e.set_defaults(func=cmd_detect)

    v = sub.add_parser("eval", help="score a detection file",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    v.add_argument("--detections", required=True)
    v.add_argument("--annotations", required=True)
    v.add_argument("--out", required=True, help="report prefix; writes <prefix>.txt and <prefix>.kv")
    v.add_argument("--thresholds", default="0.3:0.7:0.1",
                   help="start:stop:step (inclusive) or comma list; 0.5:0.95:0.05 for the 10-threshold average")
    v.set_defaults(func=cmd_eval)

    c = sub.add_parser("selfcheck", help="gradient, GIoU and oracle checks at small scale")
    c.add_argument("--checkpoint", help="also verify this checkpoint parses")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_selfcheck)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
