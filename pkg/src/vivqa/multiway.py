"""Multiway transformer fusion: shared self-attention over the concatenated
vision+text sequence, with separate per-modality feed-forward experts, then
the pooler that produces the classification vector.

Blocks are pre-norm residual:
    x <- x + drop_path(SharedMHSA(norm(x), mask))
    x <- x + drop_path(Expert_modality(norm_modality(x)))   # rows routed by k
Padded text keys get an additive mask of MASK_VALUE so their attention
weight is exactly zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .rng import RngStream
from .tensor import (
    MASK_VALUE, Tensor, add, add_bias, concat, drop_path, embedding_lookup,
    gelu, layer_norm, matmul, multi_head_attention, narrow, tanh,
)


@dataclass
class FusionConfig:
    layers: int = 6
    heads: int = 6
    hidden: int = 768
    expert_ffn_width: int = 3072
    drop_path_rate: float = 0.3
    use_position_embeddings: bool = True
    use_modality_type_embeddings: bool = True
    cls_row: str = "first"    # "first" = row 0 (a visual token); "text" = row k ([CLS])

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.cls_row not in ("first", "text"):
            raise ConfigError(f"cls_row must be 'first' or 'text', got {self.cls_row!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass
class FusedSequence:
    x: Tensor                 # (k + l_max + 2, hidden)
    boundary: int             # k: first text row
    mask: np.ndarray          # (rows,) 1.0 = real token, 0.0 = PAD

    def __post_init__(self):
        if not 0 < self.boundary < self.x.shape[0]:
            raise ValueError(
                f"boundary {self.boundary} outside sequence of {self.x.shape[0]} rows")


def _linear_params(rng: RngStream, d_in: int, d_out: int, name: str, out: dict):
    out[f"{name}.weight"] = Tensor(
        rng.split(name).normal((d_in, d_out), scale=1.0 / np.sqrt(d_in)), requires_grad=True)
    out[f"{name}.bias"] = Tensor(np.zeros(d_out), requires_grad=True)


def _norm_params(d: int, name: str, out: dict):
    out[f"{name}.gamma"] = Tensor(np.ones(d), requires_grad=True)
    out[f"{name}.beta"] = Tensor(np.zeros(d), requires_grad=True)


class MultiwayBlockParams:
    """One block: shared Q/K/V/output projections, a vision-expert FFN and a
    language-expert FFN with disjoint weights, pre-norms for each path."""

    def __init__(self, cfg: FusionConfig, rng: RngStream, prefix: str = "block"):
        self.cfg = cfg
        h, w = cfg.hidden, cfg.expert_ffn_width
        p: dict[str, Tensor] = {}
        _norm_params(h, f"{prefix}.attn_norm", p)
        for proj in ("q", "k", "v", "o"):
            _linear_params(rng, h, h, f"{prefix}.attn.{proj}", p)
        for expert in ("vision", "language"):
            _norm_params(h, f"{prefix}.{expert}_norm", p)
            _linear_params(rng, h, w, f"{prefix}.{expert}.fc1", p)
            _linear_params(rng, w, h, f"{prefix}.{expert}.fc2", p)
        self.prefix = prefix
        self.params = p

    def __getitem__(self, key: str) -> Tensor:
        return self.params[f"{self.prefix}.{key}"]


def _linear(x: Tensor, p: MultiwayBlockParams, name: str) -> Tensor:
    return add_bias(matmul(x, p[f"{name}.weight"]), p[f"{name}.bias"])


def _mask_bias(mask: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(mask) > 0.0, 0.0, MASK_VALUE)


def shared_attention(x: Tensor, mask: np.ndarray, p: MultiwayBlockParams,
                     cfg: FusionConfig, weights_sink: list | None = None) -> Tensor:
    """Pre-norm multi-head self-attention over the whole fused sequence."""
    xn = layer_norm(x, p["attn_norm.gamma"], p["attn_norm.beta"])
    q = _linear(xn, p, "attn.q")
    k = _linear(xn, p, "attn.k")
    v = _linear(xn, p, "attn.v")
    merged = multi_head_attention(q, k, v, _mask_bias(mask), cfg.heads,
                                  weights_sink=weights_sink)
    return _linear(merged, p, "attn.o")


def _expert_ffn(x: Tensor, p: MultiwayBlockParams, expert: str) -> Tensor:
    xn = layer_norm(x, p[f"{expert}_norm.gamma"], p[f"{expert}_norm.beta"])
    return _linear(gelu(_linear(xn, p, f"{expert}.fc1")), p, f"{expert}.fc2")


def expert_sublayer(x: Tensor, boundary: int, p: MultiwayBlockParams) -> Tensor:
    """Pre-residual expert output: rows [0,k) through the vision expert,
    rows [k,end) through the language expert."""
    rows = x.shape[0]
    xv = narrow(x, 0, 0, boundary)
    xt = narrow(x, 0, boundary, rows - boundary)
    return concat([_expert_ffn(xv, p, "vision"), _expert_ffn(xt, p, "language")], axis=0)


def multiway_block(f: FusedSequence, p: MultiwayBlockParams, drop_rate: float,
                   training: bool, rng: RngStream | None = None) -> FusedSequence:
    x = f.x
    attn = shared_attention(x, f.mask, p, p.cfg)
    x = add(x, drop_path(attn, drop_rate, training, rng))
    experts = expert_sublayer(x, f.boundary, p)
    x = add(x, drop_path(experts, drop_rate, training, rng))
    return FusedSequence(x=x, boundary=f.boundary, mask=f.mask)


class FusionStackParams:
    """All fusion-module parameters: per-block weights, optional learned
    position and modality-type embeddings, and the pooler."""

    def __init__(self, cfg: FusionConfig, max_rows: int, rng: RngStream):
        self.cfg = cfg
        self.blocks = []
        for i in range(cfg.layers):
            self.blocks.append(
                MultiwayBlockParams(cfg, rng.split(f"block{i}"), prefix=f"fusion.block{i}"))
        extra: dict[str, Tensor] = {}
        if cfg.use_position_embeddings:
            extra["fusion.position"] = Tensor(
                rng.split("pos").normal((max_rows, cfg.hidden), scale=0.02), requires_grad=True)
        if cfg.use_modality_type_embeddings:
            extra["fusion.type"] = Tensor(
                rng.split("type").normal((2, cfg.hidden), scale=0.02), requires_grad=True)
        _norm_params(cfg.hidden, "fusion.pooler_norm", extra)
        _linear_params(rng.split("pooler"), cfg.hidden, cfg.hidden, "fusion.pooler", extra)
        self.extra = extra

    def named_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for bp in self.blocks:
            out.update(bp.params)
        out.update(self.extra)
        return out


def concat_modalities(v: Tensor, q: Tensor, q_mask: np.ndarray,
                      stack: FusionStackParams) -> FusedSequence:
    """Vision rows first, text rows after; add learned position and
    modality-type embeddings when enabled."""
    cfg = stack.cfg
    if v.shape[-1] != cfg.hidden or q.shape[-1] != cfg.hidden:
        raise ShapeError(f"concat_modalities: widths {v.shape} / {q.shape} != {cfg.hidden}")
    k = v.shape[0]
    x = concat([v, q], axis=0)
    rows = x.shape[0]
    if cfg.use_position_embeddings:
        x = add(x, embedding_lookup(stack.extra["fusion.position"], np.arange(rows)))
    if cfg.use_modality_type_embeddings:
        types = np.concatenate([np.zeros(k, dtype=np.int64),
                                np.ones(rows - k, dtype=np.int64)])
        x = add(x, embedding_lookup(stack.extra["fusion.type"], types))
    mask = np.concatenate([np.ones(k), q_mask])
    return FusedSequence(x=x, boundary=k, mask=mask)


def block_drop_rates(cfg: FusionConfig) -> list[float]:
    """Linear stochastic-depth ramp from 0 to the configured rate."""
    if cfg.layers <= 1:
        return [cfg.drop_path_rate] * cfg.layers
    return [cfg.drop_path_rate * i / (cfg.layers - 1) for i in range(cfg.layers)]


def encode(f: FusedSequence, stack: FusionStackParams, training: bool,
           rng: RngStream | None = None) -> FusedSequence:
    rates = block_drop_rates(stack.cfg)
    for i, (bp, rate) in enumerate(zip(stack.blocks, rates)):
        layer_rng = rng.split(f"layer{i}") if rng is not None else None
        f = multiway_block(f, bp, rate, training, layer_rng)
    return f


def pool_cls(f: FusedSequence, stack: FusionStackParams) -> Tensor:
    """Classification vector: chosen row -> norm -> affine -> tanh, (1, hidden)."""
    cfg = stack.cfg
    row_idx = 0 if cfg.cls_row == "first" else f.boundary
    row = narrow(f.x, 0, row_idx, 1)
    row = layer_norm(row, stack.extra["fusion.pooler_norm.gamma"],
                     stack.extra["fusion.pooler_norm.beta"])
    row = add_bias(matmul(row, stack.extra["fusion.pooler.weight"]),
                   stack.extra["fusion.pooler.bias"])
    return tanh(row)
