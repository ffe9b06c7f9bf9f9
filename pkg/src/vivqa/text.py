"""Trainable text encoder: whitespace word vocabulary, token + positional
embeddings at the encoder width, and the affine projection down to the
fusion width.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import RngStream
from .tensor import Tensor, add, add_bias, embedding_lookup, matmul

PAD, CLS, SEP, UNK = 0, 1, 2, 3
RESERVED = ["[PAD]", "[CLS]", "[SEP]", "[UNK]"]


class Vocabulary:
    """Deterministic word vocabulary: reserved ids 0-3, then corpus tokens
    ordered by frequency descending, ties broken lexicographically."""

    def __init__(self, tokens: list[str]):
        self.id_of = {tok: i + len(RESERVED) for i, tok in enumerate(tokens)}
        self.tokens = list(tokens)

    def __len__(self) -> int:
        return len(self.tokens) + len(RESERVED)

    def lookup(self, token: str) -> int:
        return self.id_of.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if idx < len(RESERVED):
            return RESERVED[idx]
        return self.tokens[idx - len(RESERVED)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh if line.rstrip("\n")])


def build_vocab(corpus: list[str], min_count: int = 1) -> Vocabulary:
    if not corpus:
        raise ValueError("build_vocab: empty corpus")
    counts: dict[str, int] = {}
    for q in corpus:
        for tok in q.split():
            counts[tok] = counts.get(tok, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class TokenizedQuestion:
    ids: np.ndarray        # (l_max + 2,) int64, [CLS] w1..wL [SEP] then PAD
    mask: np.ndarray       # (l_max + 2,) 1.0 at the L+2 real positions
    length: int            # L, content tokens after truncation


def tokenize(question: str, vocab: Vocabulary, l_max: int) -> TokenizedQuestion:
    if l_max < 1:
        raise ValueError(f"l_max must be >= 1, got {l_max}")
    words = question.split()[:l_max]
    ids = [CLS] + [vocab.lookup(w) for w in words] + [SEP]
    total = l_max + 2
    mask = np.zeros(total)
    mask[: len(ids)] = 1.0
    ids = ids + [PAD] * (total - len(ids))
    return TokenizedQuestion(ids=np.asarray(ids, dtype=np.int64), mask=mask, length=len(words))


def detokenize(tq: TokenizedQuestion, vocab: Vocabulary) -> str:
    content = tq.ids[1 : 1 + tq.length]
    return " ".join(vocab.token_of(int(i)) for i in content)


class TextEncoderParams:
    """Token table (V x width) plus learned positional table; both trainable."""

    def __init__(self, vocab_size: int, width: int, l_max: int, rng: RngStream):
        self.width = width
        self.l_max = l_max
        self.embedding = Tensor(
            rng.split("tok").normal((vocab_size, width), scale=0.02), requires_grad=True)
        self.positional = Tensor(
            rng.split("pos").normal((l_max + 2, width), scale=0.02), requires_grad=True)

    def named_params(self) -> dict[str, Tensor]:
        return {"text.embedding": self.embedding, "text.positional": self.positional}


def encode(tq: TokenizedQuestion, p: TextEncoderParams) -> Tensor:
    """(l_max + 2, width) token + positional embeddings; PAD rows are
    produced here and masked downstream."""
    tok = embedding_lookup(p.embedding, tq.ids)
    pos = embedding_lookup(p.positional, np.arange(len(tq.ids)))
    return add(tok, pos)


class ProjectionParams:
    def __init__(self, in_width: int, out_width: int, rng: RngStream):
        self.in_width = in_width
        self.weight = Tensor(
            rng.normal((in_width, out_width), scale=1.0 / np.sqrt(in_width)),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_width), requires_grad=True)

    def named_params(self) -> dict[str, Tensor]:
        return {"text.proj.weight": self.weight, "text.proj.bias": self.bias}


def project(q: Tensor, p: ProjectionParams) -> Tensor:
    if q.shape[-1] != p.in_width:
        raise ShapeError(f"project: last axis {q.shape} != {p.in_width}")
    return add_bias(matmul(q, p.weight), p.bias)
