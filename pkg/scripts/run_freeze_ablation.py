#!/usr/bin/env python3
"""Frozen vs unfrozen extractor comparison at identical seed: accuracy,
trainable-parameter counts, backward node visits, and wall clock."""
import argparse
import json

from vivqa.config import RunConfig
from vivqa.data import make_synthetic, split_train_test
from vivqa.harness import ablate_freeze


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/freeze_ablation")
    args = ap.parse_args()

    corpus = make_synthetic(args.n, 4, 4, seed=args.seed)
    train, test = split_train_test(corpus, 0.8, args.seed)
    cfg = RunConfig(preset="tiny", epochs=args.epochs, batch_size=16, lr=1e-3,
                    layers=2, heads=2, drop_path=0.0, seed=args.seed)
    results = ablate_freeze(cfg, train, test, out_dir=args.out)
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
