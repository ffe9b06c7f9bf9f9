"""Training protocol and evaluation: cross-entropy over the answer classes,
AdamW with the cosine-warmup schedule, deterministic batching per seed.

Reports are split into a deterministic part (report.json — a pure function
of config, seed, corpus) and a timing file that is allowed to vary between
machines.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .classifier import predict
from .config import RunConfig
from .data import (
    AnswerVocab, Example, OOV_TARGET, batch_iter, load_jsonl, split_train_test,
)
from .errors import ConfigError, DataError
from .metrics import MetricsReport, PredictionRecord, report as metrics_report, \
    write_predictions
from .model import VivqaModel, ensure_out_dir, save_checkpoint
from .optim import AdamW, ScheduleConfig, lr_at
from .rng import RngStream
from .text import Vocabulary, build_vocab, tokenize


@dataclass
class RunReport:
    seed: int
    config: dict
    epoch_losses: list = field(default_factory=list)
    train_metrics: dict | None = None
    test_metrics: dict | None = None
    param_counts: dict | None = None
    backward_node_visits: int = 0
    epochs_run: int = 0
    wall_clock_seconds: float = 0.0

    def deterministic_dict(self) -> dict:
        """Everything that must be bitwise reproducible per (config, seed,
        corpus): wall clock and filesystem paths are excluded."""
        out = asdict(self)
        out.pop("wall_clock_seconds")
        out["config"] = {k: v for k, v in out["config"].items()
                         if k not in ("data", "eval_data", "out")}
        return out


def _n_local_cues(examples) -> int | None:
    from .data import SyntheticSpec
    cues = set()
    for ex in examples:
        if not ex.image.startswith("synthetic:"):
            return None
        cues.add(SyntheticSpec.parse(ex.image).local_cue)
    return max(cues) + 1 if cues else None


def build_model(cfg: RunConfig, train_split) -> VivqaModel:
    vocab = build_vocab([ex.question for ex in train_split])
    answer_vocab = AnswerVocab.from_examples(train_split)
    return VivqaModel(cfg, vocab, answer_vocab, n_local_cues=_n_local_cues(train_split))


def _metrics_to_dict(m: MetricsReport) -> dict:
    return {"accuracy": m.accuracy, "precision": m.precision, "recall": m.recall,
            "f1": m.f1, "n": m.n}


def predict_split(model: VivqaModel, split) -> list[PredictionRecord]:
    """Deterministic eval-mode inference over a split."""
    records = []
    for ex in split:
        tokens = tokenize(ex.question, model.vocab, model.cfg.l_max)
        logits = model.forward(ex, tokens, training=False)
        dist = predict(logits, model.answer_vocab.answers)
        records.append(PredictionRecord(id=ex.id, prediction=dist.answer,
                                        ground_truth=ex.answer))
    return records


def train_model(model: VivqaModel, train_split, cfg: RunConfig) -> RunReport:
    """Run the optimization loop on an already-built model."""
    params = model.trainable_params()
    optimizer = AdamW(params, betas=cfg.adam_betas, eps=cfg.adam_eps,
                      weight_decay=cfg.weight_decay, exempt=model.decay_exempt_names())
    n_batches = math.ceil(len(train_split) / cfg.batch_size)
    schedule = ScheduleConfig(peak_lr=cfg.lr, total_steps=max(1, cfg.epochs * n_batches),
                              warmup_ratio=cfg.warmup_ratio, floor_lr=cfg.floor_lr)
    run_rng = RngStream(cfg.seed).split("train")
    report = RunReport(seed=cfg.seed, config=json.loads(cfg.to_json()))
    visits_before = T.backward_node_visits()
    started = time.perf_counter()
    step = 0
    item_cache: dict = {}
    for epoch in range(cfg.epochs):
        epoch_rng = run_rng.split(f"epoch-{epoch}")
        losses = []
        hits = 0
        total = 0
        for batch in batch_iter(train_split, cfg.batch_size, cfg.l_max,
                                model.answer_vocab, model.vocab,
                                cfg.seed, epoch, is_train=True,
                                item_cache=item_cache):
            optimizer.zero_grad()
            inv_b = 1.0 / len(batch)
            for j, item in enumerate(batch):
                item_rng = epoch_rng.split(f"item-{item.example.id}")
                logits = model.forward(item.example, item.tokens,
                                       training=True, rng=item_rng)
                loss = T.cross_entropy(logits, item.target)
                losses.append(float(loss.data))
                if int(np.argmax(logits.data)) == item.target:
                    hits += 1
                total += 1
                T.backward(T.scale(loss, inv_b))
            optimizer.step(lr_at(step, schedule))
            step += 1
        report.epoch_losses.append(sum(losses) / max(1, len(losses)))
        report.epochs_run = epoch + 1
        if (cfg.early_stop_train_acc is not None
                and total and hits / total >= cfg.early_stop_train_acc):
            break
    report.wall_clock_seconds = time.perf_counter() - started
    report.backward_node_visits = T.backward_node_visits() - visits_before
    report.param_counts = model.param_counts()
    return report


def run_training(cfg: RunConfig, train_split=None, test_split=None) -> tuple[RunReport, VivqaModel]:
    """Full train entry: load corpus if needed, train, evaluate both splits,
    write report/checkpoint when cfg.out is set."""
    if train_split is None:
        if cfg.data is None:
            raise ConfigError("no training data: set cfg.data or pass a split")
        examples = load_jsonl(cfg.data)
        if not examples:
            raise DataError(f"{cfg.data}: empty corpus")
        if cfg.eval_data is not None:
            train_split = examples
            test_split = load_jsonl(cfg.eval_data)
        else:
            train_split, test_split = split_train_test(
                examples, cfg.split_ratio, cfg.split_seed)
    model = build_model(cfg, train_split)
    report = train_model(model, train_split, cfg)

    train_records = predict_split(model, train_split)
    report.train_metrics = _metrics_to_dict(metrics_report(train_records))
    test_records = None
    if test_split:
        test_records = predict_split(model, test_split)
        report.test_metrics = _metrics_to_dict(metrics_report(test_records))

    if cfg.out:
        out = ensure_out_dir(cfg.out)
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report.deterministic_dict(), fh, indent=2, sort_keys=True)
        with open(os.path.join(out, "timing.txt"), "w") as fh:
            fh.write(f"wall_clock_seconds={report.wall_clock_seconds:.3f}\n")
        save_checkpoint(os.path.join(out, "checkpoint.npz"), model)
        write_predictions(os.path.join(out, "train_predictions.jsonl"), train_records)
        if test_records is not None:
            write_predictions(os.path.join(out, "test_predictions.jsonl"), test_records)
    return report, model


def evaluate_model(model: VivqaModel, corpus, out_dir=None):
    """Eval-mode inference + metrics; optionally writes predictions JSONL."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("evaluate: empty corpus")
    records = predict_split(model, corpus)
    rep = metrics_report(records)
    if out_dir:
        ensure_out_dir(out_dir)
        write_predictions(os.path.join(out_dir, "predictions.jsonl"), records)
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            json.dump(_metrics_to_dict(rep), fh, indent=2, sort_keys=True)
    return rep, records
