"""Held-out mAP@0.5 for 1 vs 6 temporal hourglass modules on the synthetic benchmark.

No ordering is expected: the benchmark is far easier than real video, so a
single module may do as well as six.
"""
import argparse
import dataclasses
import logging

from mltpn.experiments import BENCHMARK_TRAIN, thm_ablation


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--counts", type=int, nargs="+", default=[1, 6])
    p.add_argument("--max-epochs", type=int, default=BENCHMARK_TRAIN.max_epochs)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = dataclasses.replace(BENCHMARK_TRAIN, max_epochs=args.max_epochs)
    for n, r in thm_ablation(args.out, args.counts, cfg).items():
        print(f"num_thm {n}: held-out mAP@0.5 {r.val_map:.4f} (train {r.train_map:.4f}, best epoch {r.best_epoch})")


if __name__ == "__main__":
    main()
