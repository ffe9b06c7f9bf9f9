"""Experiment harness: fusion-operator comparison, extractor ablation with
seed-level significance, freeze ablation, heads/layers sweeps, and
multi-seed significance between two configs.  Emits CSV and Markdown
tables; all deterministic given (config, seeds, corpus).
"""
from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import replace

import numpy as np

from .config import RunConfig
from .data import make_synthetic
from .errors import ConfigError
from .metrics import welch_t_test
from .model import ensure_out_dir
from .train import run_training
from .vision import FUSION_OPS, fused_token_count, sparsity_stats

FUSION_LABELS = {
    "multiply": "Element-wise Multiplication",
    "add": "Element-wise Addition",
    "concatenate": "Concatenation",
}


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_markdown(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("| " + " | ".join(header) + " |\n")
        fh.write("|" + "|".join("---" for _ in header) + "|\n")
        for row in rows:
            fh.write("| " + " | ".join(str(c) for c in row) + " |\n")


def _run_arm(cfg: RunConfig, train_split, test_split):
    report, model = run_training(replace(cfg, out=None), train_split, test_split)
    acc = report.test_metrics["accuracy"] if report.test_metrics else \
        report.train_metrics["accuracy"]
    return report, model, acc


def ablate_fusion(cfg: RunConfig, train_split, test_split, out_dir=None) -> dict:
    """Train the three fusion operators under identical seeds; report
    accuracy per operator plus the per-image fused-feature mean spread
    behind the sparsity boxplots."""
    results = {}
    for op in FUSION_OPS:
        arm_cfg = replace(cfg, fusion_op=op, vision_mode="both")
        report, model, acc = _run_arm(arm_cfg, train_split, test_split)
        means = [float(model.vision_tokens(ex).data.mean()) for ex in train_split]
        results[op] = {
            "label": FUSION_LABELS[op],
            "fused_dims": f"{fused_token_count(op, model.vision_dims.n_tokens)}"
                          f"x{model.vision_dims.token_dim}",
            "accuracy": acc,
            "boxplot_means": means,
            "sparsity": sparsity_stats(np.asarray(means)),
        }
    if out_dir:
        out = ensure_out_dir(out_dir)
        header = ["Operation", "Fused dims", "Accuracy"]
        rows = [[r["label"], r["fused_dims"], f"{r['accuracy']:.4f}"]
                for r in results.values()]
        _write_csv(os.path.join(out, "fusion_ablation.csv"), header, rows)
        _write_markdown(os.path.join(out, "fusion_ablation.md"), header, rows)
        _write_csv(os.path.join(out, "fusion_boxplot_data.csv"),
                   ["operation", "example_index", "feature_mean"],
                   [(op, i, m) for op, r in results.items()
                    for i, m in enumerate(r["boxplot_means"])])
    return results


EXTRACTOR_ARMS = (
    ("local", "EfficientNet-stub only"),
    ("global", "BLIP-2-stub only"),
    ("both", "combined"),
)


def ablate_extractors(cfg: RunConfig, train_split, test_split, seeds,
                      out_dir=None) -> dict:
    """Local-only / global-only / combined runs per seed, with Welch
    t-tests of combined against each single arm."""
    accs: dict[str, list[float]] = {mode: [] for mode, _ in EXTRACTOR_ARMS}
    for seed in seeds:
        for mode, _ in EXTRACTOR_ARMS:
            arm_cfg = replace(cfg, vision_mode=mode, seed=seed)
            _, _, acc = _run_arm(arm_cfg, train_split, test_split)
            accs[mode].append(acc)
    results = {"per_seed": accs, "mean": {m: float(np.mean(a)) for m, a in accs.items()},
               "t_tests": {}}
    for mode in ("local", "global"):
        tt = welch_t_test(accs["both"], accs[mode])
        results["t_tests"][f"both_vs_{mode}"] = {
            "t": tt.t, "df": tt.df, "p": tt.p, "significant": tt.significant}
    if out_dir:
        out = ensure_out_dir(out_dir)
        header = ["Visual Extractor", "Accuracy (mean)", "p vs combined"]
        rows = []
        for mode, label in EXTRACTOR_ARMS:
            p = ("-" if mode == "both"
                 else f"{results['t_tests'][f'both_vs_{mode}']['p']:.4g}")
            rows.append([label, f"{results['mean'][mode]:.4f}", p])
        _write_csv(os.path.join(out, "extractor_ablation.csv"), header, rows)
        _write_markdown(os.path.join(out, "extractor_ablation.md"), header, rows)
        with open(os.path.join(out, "extractor_ablation.json"), "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
    return results


def ablate_freeze(cfg: RunConfig, train_split, test_split, out_dir=None) -> dict:
    """Frozen vs unfrozen extractors at identical seed.  Asserts the freeze
    contract (bitwise-constant extractor bytes, strictly fewer trainable
    parameters and backward node visits); wall clock is reported only."""
    results = {}
    for frozen in (True, False):
        arm_cfg = replace(cfg, freeze_extractors=frozen)
        from .train import build_model, train_model, predict_split
        from .metrics import report as metrics_report
        model = build_model(arm_cfg, train_split)
        digest_before = model.extractor.byte_digest()
        report = train_model(model, train_split, arm_cfg)
        digest_after = model.extractor.byte_digest()
        split = test_split if test_split else train_split
        acc = metrics_report(predict_split(model, split)).accuracy
        results["frozen" if frozen else "unfrozen"] = {
            "accuracy": acc,
            "epochs": report.epochs_run,
            "training_seconds": report.wall_clock_seconds,
            "trainable_params": report.param_counts["trainable"],
            "backward_node_visits": report.backward_node_visits,
            "extractor_bytes_unchanged": digest_before == digest_after,
        }
    fr, uf = results["frozen"], results["unfrozen"]
    results["contract"] = {
        "frozen_bytes_unchanged": fr["extractor_bytes_unchanged"],
        "fewer_trainable_params": fr["trainable_params"] < uf["trainable_params"],
        "fewer_backward_visits": fr["backward_node_visits"] < uf["backward_node_visits"],
    }
    if out_dir:
        out = ensure_out_dir(out_dir)
        header = ["Visual Extractor", "Freeze", "Accuracy", "Epoch", "Training Time (s)"]
        rows = [
            ["stub extractors", "yes", f"{fr['accuracy']:.4f}", fr["epochs"],
             f"{fr['training_seconds']:.1f}"],
            ["stub extractors", "no", f"{uf['accuracy']:.4f}", uf["epochs"],
             f"{uf['training_seconds']:.1f}"],
        ]
        _write_csv(os.path.join(out, "freeze_ablation.csv"), header, rows)
        _write_markdown(os.path.join(out, "freeze_ablation.md"), header, rows)
    return results


def sweep(cfg: RunConfig, axis: str, values, train_split, test_split,
          out_dir=None) -> list[dict]:
    """One run per value at fixed seed; the other axis stays pinned."""
    if axis not in ("heads", "layers"):
        raise ConfigError(f"sweep axis must be 'heads' or 'layers', got {axis!r}")
    curve = []
    for value in values:
        arm_cfg = replace(cfg, **{axis: int(value)})
        _, _, acc = _run_arm(arm_cfg, train_split, test_split)
        curve.append({axis: int(value), "accuracy": acc})
    if out_dir:
        out = ensure_out_dir(out_dir)
        _write_csv(os.path.join(out, f"sweep_{axis}.csv"), [axis, "accuracy"],
                   [[pt[axis], f"{pt['accuracy']:.6f}"] for pt in curve])
    return curve


def significance(cfg_a: RunConfig, cfg_b: RunConfig, train_split, test_split,
                 n_seeds: int = 10, out_dir=None) -> dict:
    """Run both configs across n_seeds seeds and Welch-test the accuracies."""
    if n_seeds < 2:
        raise ConfigError("significance needs at least 2 seeds")
    seeds = list(range(n_seeds))
    accs = {"a": [], "b": []}
    for seed in seeds:
        for key, base in (("a", cfg_a), ("b", cfg_b)):
            _, _, acc = _run_arm(replace(base, seed=seed), train_split, test_split)
            accs[key].append(acc)
    tt = welch_t_test(accs["a"], accs["b"])
    result = {
        "seeds": seeds,
        "accuracies_a": accs["a"],
        "accuracies_b": accs["b"],
        "t": tt.t, "df": tt.df, "p": tt.p, "significant": tt.significant,
    }
    if out_dir:
        out = ensure_out_dir(out_dir)
        _write_csv(os.path.join(out, "significance_per_seed.csv"),
                   ["seed", "accuracy_a", "accuracy_b"],
                   [[s, a, b] for s, a, b in zip(seeds, accs["a"], accs["b"])])
        with open(os.path.join(out, "significance.json"), "w") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
    return result
