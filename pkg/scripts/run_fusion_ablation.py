#!/usr/bin/env python3
"""Fusion-operator comparison (multiply / add / concatenate) on a synthetic
corpus, with per-image fused-feature spread data for sparsity boxplots."""
import argparse
import json

from vivqa.config import RunConfig
from vivqa.data import make_synthetic, split_train_test
from vivqa.harness import ablate_fusion


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=160)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/fusion_ablation")
    args = ap.parse_args()

    corpus = make_synthetic(args.n, 4, 4, seed=args.seed)
    train, test = split_train_test(corpus, 0.8, args.seed)
    cfg = RunConfig(preset="tiny", epochs=args.epochs, batch_size=16, lr=1e-3,
                    layers=1, heads=2, drop_path=0.0, seed=args.seed,
                    early_stop_train_acc=0.999)
    results = ablate_fusion(cfg, train, test, out_dir=args.out)
    print(json.dumps({op: {"accuracy": r["accuracy"], "fused_dims": r["fused_dims"]}
                      for op, r in results.items()}, indent=2))


if __name__ == "__main__":
    main()
