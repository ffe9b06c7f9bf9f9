"""Corpus loading, answer vocabulary, deterministic splits/folds, batching,
corpus statistics, and the synthetic complementary-cue generator.

The synthetic corpus is built so the two stub extractors each see exactly
one cue: the global cue is a within-block zero-mean Walsh texture over the
whole image (invisible to block-mean pooling), the local cue is *which*
grid block carries a fixed color offset (invisible to the centered-texture
global stub).  The answer names the (global, local) pair, so a model fed
one extractor caps at chance over the other cue.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

from .errors import DataError, ParseError
from .metrics import canonicalize
from .rng import RngStream
from .text import TokenizedQuestion, Vocabulary, tokenize
from .vision import MID_GRAY, VisionDims

OOV_TARGET = -1


@dataclass(frozen=True)
class Example:
    id: str
    image: str          # "synthetic:g=G,l=L", or a path base for .vvqf pairs
    question: str
    answer: str


def load_jsonl(path) -> list[Example]:
    out: list[Example] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            missing = [k for k in ("id", "image", "question", "answer") if k not in obj]
            if missing:
                raise ParseError(f"{path}:{lineno}: missing fields {missing}")
            ex = Example(id=str(obj["id"]), image=str(obj["image"]),
                         question=str(obj["question"]), answer=str(obj["answer"]))
            if not ex.answer:
                raise ParseError(f"{path}:{lineno}: empty answer")
            if ex.id in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {ex.id!r}")
            seen.add(ex.id)
            out.append(ex)
    return out


def save_jsonl(path, examples) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(
                {"id": ex.id, "image": ex.image, "question": ex.question, "answer": ex.answer},
                ensure_ascii=False) + "\n")


class AnswerVocab:
    """Canonicalized answer string -> class index, built from training
    answers only; frequency descending, ties lexicographic."""

    def __init__(self, answers: list[str]):
        if not answers:
            raise ValueError("AnswerVocab: no answers")
        counts: dict[str, int] = {}
        for a in answers:
            key = canonicalize(a)
            counts[key] = counts.get(key, 0) + 1
        self.answers = sorted(counts, key=lambda a: (-counts[a], a))
        self.index = {a: i for i, a in enumerate(self.answers)}

    def __len__(self) -> int:
        return len(self.answers)

    def target_of(self, answer: str) -> int:
        """Class index, or OOV_TARGET for answers outside the training set."""
        return self.index.get(canonicalize(answer), OOV_TARGET)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for a in self.answers:
                fh.write(a + "\n")

    @classmethod
    def from_examples(cls, examples) -> "AnswerVocab":
        return cls([ex.answer for ex in examples])


def split_train_test(examples, ratio: float = 0.8, seed: int = 0):
    examples = list(examples)
    if not examples:
        raise ValueError("split_train_test: empty corpus")
    order = RngStream(seed).split("train-test-split").permutation(len(examples))
    n_train = math.ceil(ratio * len(examples))
    train = [examples[i] for i in order[:n_train]]
    test = [examples[i] for i in order[n_train:]]
    return train, test


@dataclass(frozen=True)
class FoldPlan:
    fold_of: tuple    # fold index per example position
    k: int

    def fold_indices(self, f: int) -> list[int]:
        return [i for i, v in enumerate(self.fold_of) if v == f]

    def splits(self):
        """Yield (train_positions, val_positions) per fold."""
        for f in range(self.k):
            val = self.fold_indices(f)
            train = [i for i, v in enumerate(self.fold_of) if v != f]
            yield train, val


def kfold(examples, k: int = 5, seed: int = 0) -> FoldPlan:
    n = len(examples)
    if k > n:
        raise ValueError(f"kfold: k={k} exceeds corpus size {n}")
    order = RngStream(seed).split("kfold").permutation(n)
    fold_of = [0] * n
    for pos, idx in enumerate(order):
        fold_of[idx] = pos % k
    return FoldPlan(fold_of=tuple(fold_of), k=k)


def _render_mean(total: int, n: int) -> str:
    frac = Fraction(total, n)
    d = Decimal(frac.numerator) / Decimal(frac.denominator)
    return str(d.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def corpus_stats(examples) -> dict:
    examples = list(examples)
    if not examples:
        raise ValueError("corpus_stats: empty corpus")
    q_lens = [len(ex.question.split()) for ex in examples]
    a_lens = [len(ex.answer.split()) for ex in examples]
    return {
        "count": len(examples),
        "longest_question": max(q_lens),
        "longest_answer": max(a_lens),
        "average_question": _render_mean(sum(q_lens), len(examples)),
        "average_answer": _render_mean(sum(a_lens), len(examples)),
    }


# ---------------------------------------------------------------------------
# Synthetic complementary-cue corpus

BASE_LEVEL = MID_GRAY
TEXTURE_AMP = 0.12
LOCAL_DELTA = (0.30, 0.18, 0.24)
NOISE_AMP = 0.02

_QUESTION_TEMPLATES = (
    "what pair is shown",
    "which pair appears here",
    "name the pair in this image",
)


@dataclass(frozen=True)
class SyntheticSpec:
    global_cue: int
    local_cue: int

    def image_ref(self) -> str:
        return f"synthetic:g={self.global_cue},l={self.local_cue}"

    @classmethod
    def parse(cls, ref: str) -> "SyntheticSpec":
        if not ref.startswith("synthetic:"):
            raise DataError(f"not a synthetic image ref: {ref!r}")
        fields = dict(part.split("=") for part in ref[len("synthetic:"):].split(","))
        return cls(global_cue=int(fields["g"]), local_cue=int(fields["l"]))


def _walsh_texture(g: int, block: int) -> np.ndarray:
    """Within-block zero-mean sign pattern: 2-D Walsh function (index g+1)
    on a 4x4 sub-grid tiled over one block.  Supports up to 15 cues."""
    m = g + 1
    sub = block // 4
    u = np.arange(4)
    bits_u = ((m >> 0) & 1) * (u & 1) + ((m >> 1) & 1) * ((u >> 1) & 1)
    v = np.arange(4)
    bits_v = ((m >> 2) & 1) * (v & 1) + ((m >> 3) & 1) * ((v >> 1) & 1)
    signs = (-1.0) ** (bits_u[:, None] + bits_v[None, :])
    return np.kron(signs, np.ones((sub, sub)))


def _local_positions(grid: int, n_local: int) -> list[tuple[int, int]]:
    cells = [(i, i) for i in range(grid)]
    cells += [(i, j) for i in range(grid) for j in range(grid) if i != j]
    return cells[:n_local]


def render_synthetic(spec: SyntheticSpec, dims: VisionDims, n_local: int,
                     noise_seed: int = 0) -> np.ndarray:
    """Deterministic (channels, H, W) image in [0, 1] for one cue pair."""
    if dims.block % 4 != 0:
        raise ValueError(f"block size {dims.block} not divisible by 4")
    c, size, b, grid = dims.channels, dims.image_size, dims.block, dims.grid
    img = np.full((c, size, size), BASE_LEVEL)
    tile = _walsh_texture(spec.global_cue, b)
    img += TEXTURE_AMP * np.tile(tile, (grid, grid))[None, :, :]
    bi, bj = _local_positions(grid, n_local)[spec.local_cue]
    for ch in range(c):
        img[ch, bi * b:(bi + 1) * b, bj * b:(bj + 1) * b] += LOCAL_DELTA[ch % 3]
    noise = RngStream(noise_seed).split("pixel-noise").uniform(-NOISE_AMP, NOISE_AMP,
                                                               (c, size, size))
    return np.clip(img + noise, 0.0, 1.0)


def synthetic_answer(spec: SyntheticSpec) -> str:
    return f"g{spec.global_cue} l{spec.local_cue}"


def make_synthetic(n: int, n_global: int, n_local: int, seed: int,
                   id_prefix: str = "syn") -> list[Example]:
    """n examples cycling through all cue pairs in seeded order, so every
    answer class appears about n/(n_global*n_local) times."""
    if n < 1:
        raise ValueError("make_synthetic: n must be >= 1")
    if n_global < 2 or n_local < 2:
        raise ValueError("make_synthetic: cue counts must be >= 2")
    if n_global > 15:
        raise ValueError("make_synthetic: at most 15 global texture cues")
    rng = RngStream(seed).split("make-synthetic")
    pairs = [(g, l) for g in range(n_global) for l in range(n_local)]
    out: list[Example] = []
    for i in range(n):
        if i % len(pairs) == 0:
            order = rng.permutation(len(pairs))
        g, l = pairs[order[i % len(pairs)]]
        spec = SyntheticSpec(g, l)
        question = _QUESTION_TEMPLATES[int(rng.integers(0, len(_QUESTION_TEMPLATES)))]
        out.append(Example(id=f"{id_prefix}-{i:05d}", image=spec.image_ref(),
                           question=question, answer=synthetic_answer(spec)))
    return out


def example_noise_seed(example_id: str) -> int:
    import hashlib
    return int.from_bytes(hashlib.sha256(example_id.encode()).digest()[:8], "little")


# ---------------------------------------------------------------------------
# Batching


@dataclass(frozen=True)
class BatchItem:
    example: Example
    tokens: TokenizedQuestion
    target: int


def batch_iter(split, batch_size: int, l_max: int, answer_vocab: AnswerVocab,
               vocab: Vocabulary, seed: int, epoch: int, is_train: bool,
               item_cache: dict | None = None):
    """Seeded per-epoch reshuffle; yields lists of BatchItem, final partial
    batch included.  OOV train answers are a data error; OOV test answers
    map to a reserved target that can never be predicted correctly.

    `item_cache` (example id -> BatchItem) lets callers skip re-tokenizing
    across epochs; the shuffle order is unaffected by the cache."""
    if batch_size < 1:
        raise ValueError("batch_iter: batch_size must be >= 1")
    split = list(split)
    order = RngStream(seed).split(f"batch-epoch-{epoch}").permutation(len(split))
    items = []
    for idx in order:
        ex = split[idx]
        cached = item_cache.get(ex.id) if item_cache is not None else None
        if cached is None:
            target = answer_vocab.target_of(ex.answer)
            if target == OOV_TARGET and is_train:
                raise DataError(
                    f"train answer {ex.answer!r} (example {ex.id}) not in vocabulary")
            cached = BatchItem(example=ex, tokens=tokenize(ex.question, vocab, l_max),
                               target=target)
            if item_cache is not None:
                item_cache[ex.id] = cached
        items.append(cached)
    for i in range(0, len(items), batch_size):
        yield items[i:i + batch_size]
