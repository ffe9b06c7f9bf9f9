"""Classification head and answer selection: affine -> norm -> GELU ->
affine to the answer classes, then softmax + argmax (ties to lowest index).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import RngStream
from .tensor import Tensor, add_bias, gelu, layer_norm, matmul, softmax


class ClassifierParams:
    """768 -> 1536 -> C at paper scale; hidden is 2x the pooled width."""

    def __init__(self, in_width: int, n_classes: int, rng: RngStream):
        self.in_width = in_width
        self.hidden = 2 * in_width
        self.n_classes = n_classes
        s1 = 1.0 / np.sqrt(in_width)
        s2 = 1.0 / np.sqrt(self.hidden)
        self.fc1_w = Tensor(rng.split("fc1").normal((in_width, self.hidden), scale=s1),
                            requires_grad=True)
        self.fc1_b = Tensor(np.zeros(self.hidden), requires_grad=True)
        self.norm_gamma = Tensor(np.ones(self.hidden), requires_grad=True)
        self.norm_beta = Tensor(np.zeros(self.hidden), requires_grad=True)
        self.fc2_w = Tensor(rng.split("fc2").normal((self.hidden, n_classes), scale=s2),
                            requires_grad=True)
        self.fc2_b = Tensor(np.zeros(n_classes), requires_grad=True)

    def named_params(self) -> dict[str, Tensor]:
        return {
            "classifier.fc1.weight": self.fc1_w,
            "classifier.fc1.bias": self.fc1_b,
            "classifier.norm.gamma": self.norm_gamma,
            "classifier.norm.beta": self.norm_beta,
            "classifier.fc2.weight": self.fc2_w,
            "classifier.fc2.bias": self.fc2_b,
        }


def classify(x: Tensor, p: ClassifierParams) -> Tensor:
    """(1, in_width) -> (1, C) logits.  Loss consumes logits directly;
    softmax is materialized only at prediction time."""
    if x.shape != (1, p.in_width):
        raise ShapeError(f"classify: input shape {x.shape} != (1, {p.in_width})")
    h = add_bias(matmul(x, p.fc1_w), p.fc1_b)
    h = layer_norm(h, p.norm_gamma, p.norm_beta)
    h = gelu(h)
    return add_bias(matmul(h, p.fc2_w), p.fc2_b)


@dataclass(frozen=True)
class AnswerDistribution:
    probabilities: np.ndarray
    index: int
    answer: str


def predict(logits: Tensor, answer_vocab: list[str]) -> AnswerDistribution:
    flat = logits.data.reshape(-1)
    if flat.shape[0] != len(answer_vocab):
        raise ShapeError(f"predict: {flat.shape[0]} logits vs {len(answer_vocab)} answers")
    probs = softmax(Tensor(flat), axis=-1).data
    idx = int(np.argmax(flat))  # np.argmax returns the lowest index on ties
    return AnswerDistribution(probabilities=probs, index=idx, answer=answer_vocab[idx])
