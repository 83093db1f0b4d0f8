"""Overfit a tiny model (2 THMs, 2 pyramid levels) on 8 synthetic videos.

Stops once training-set mAP@0.5 >= 0.9 and the loss has dropped by 90% from
epoch 1, or after the epoch budget.
"""
import argparse
import dataclasses
import logging

from mltpn.experiments import OVERFIT_TRAIN, overfit


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--max-epochs", type=int, default=OVERFIT_TRAIN.max_epochs)
    p.add_argument("--lr", type=float, default=OVERFIT_TRAIN.lr)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = dataclasses.replace(OVERFIT_TRAIN, max_epochs=args.max_epochs, lr=args.lr)
    r = overfit(config=cfg, seed=args.seed)
    print(f"epochs {r.epochs}  loss {r.first_loss:.4f} -> {r.last_loss:.4f} ({100 * r.loss_reduction:.1f}% lower)  "
          f"train mAP@0.5 {r.train_map:.3f}  {r.seconds:.0f}s")


if __name__ == "__main__":
    main()
