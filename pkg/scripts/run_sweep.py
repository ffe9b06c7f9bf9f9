#!/usr/bin/env python3
"""Heads or layers sweep at fixed seed on a synthetic corpus."""
import argparse
import json

from vivqa.config import RunConfig
from vivqa.data import make_synthetic, split_train_test
from vivqa.harness import sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--axis", choices=("heads", "layers"), default="heads")
    ap.add_argument("--values", default="1,2,3,4")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/sweep")
    args = ap.parse_args()

    corpus = make_synthetic(128, 4, 4, seed=args.seed)
    train, test = split_train_test(corpus, 0.8, args.seed)
    cfg = RunConfig(preset="tiny", epochs=args.epochs, batch_size=16, lr=1e-3,
                    layers=1, heads=2, drop_path=0.0, seed=args.seed,
                    early_stop_train_acc=0.999)
    values = [int(v) for v in args.values.split(",")]
    curve = sweep(cfg, args.axis, values, train, test, out_dir=args.out)
    print(json.dumps(curve, indent=2))


if __name__ == "__main__":
    main()
