"""Frozen visual feature extraction, the pooling adapter chain, and fusion.

Two stub extractors stand in for the real pretrained backbones while
honoring their output contracts (32x768 query tokens and 2560x7x7 local
grid at paper scale):

* local stub: mean-pool the image into the block grid, then a seeded
  per-cell channel map 3 -> local_channels.  It sees block means and
  nothing finer.
* global stub: a seeded linear map of a whole-image summary made of the
  per-channel image means plus per-patch *centered* pixel projections
  (texture).  Subtracting each patch's mean before projecting makes the
  stub blind to which block carries a mean offset, so block-level cues
  stay invisible to it; conversely zero-mean textures are invisible to
  the local stub.  This exact complementarity is what the synthetic
  ablation corpus relies on.

Both stubs are linear in the pixels, deterministic per seed, and detached
from the gradient tape when frozen.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .rng import RngStream
from .tensor import (
    Tensor, adaptive_avg_pool, add, add_bias, concat, flatten, matmul, mul,
    permute, reshape,
)

FUSION_OPS = ("multiply", "add", "concatenate")

# Fixed affine offset of the local stub: block means are expressed as
# contrast against mid-gray so features are not dominated by a shared
# brightness background.  Images are expected in [0, 1].
MID_GRAY = 0.5


@dataclass(frozen=True)
class VisionDims:
    image_size: int = 224
    channels: int = 3
    block: int = 32              # local pooling block edge; grid = image_size // block
    n_tokens: int = 32           # query-token count of the global contract
    token_dim: int = 768
    local_channels: int = 2560
    texture_dim: int = 8         # per-patch texture projection width in the global stub

    @property
    def grid(self) -> int:
        return self.image_size // self.block

    @property
    def summary_dim(self) -> int:
        return self.channels + self.grid * self.grid * self.texture_dim


class StubExtractorParams:
    """Seeded projection weights for both stubs.  Never optimizer-registered
    unless explicitly unfrozen for the freeze ablation."""

    def __init__(self, dims: VisionDims, seed: int, trainable: bool = False):
        self.dims = dims
        self.seed = seed
        rng = RngStream(seed).split("stub-extractors")
        d = dims
        # texture projector is fixed preprocessing even in the unfrozen arm
        self.patch_proj = rng.split("patch-proj").normal(
            (d.texture_dim, d.block * d.block * d.channels),
            scale=1.0 / np.sqrt(d.block * d.block * d.channels),
        )
        g = rng.split("global")
        self.global_weight = Tensor(
            g.normal((d.summary_dim, d.n_tokens * d.token_dim),
                     scale=1.0 / np.sqrt(d.summary_dim)),
            requires_grad=trainable)
        self.global_bias = Tensor(
            g.normal((d.n_tokens * d.token_dim,), scale=0.02), requires_grad=trainable)
        l = rng.split("local")
        self.local_weight = Tensor(
            l.normal((d.channels, d.local_channels), scale=1.0 / np.sqrt(d.channels)),
            requires_grad=trainable)
        self.local_bias = Tensor(
            l.normal((d.local_channels,), scale=0.02), requires_grad=trainable)

    def named_params(self) -> dict[str, Tensor]:
        return {
            "extractor.global.weight": self.global_weight,
            "extractor.global.bias": self.global_bias,
            "extractor.local.weight": self.local_weight,
            "extractor.local.bias": self.local_bias,
        }

    def byte_digest(self) -> bytes:
        import hashlib
        h = hashlib.sha256()
        for t in (self.global_weight, self.global_bias, self.local_weight, self.local_bias):
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.digest()


def _check_image(img: np.ndarray, dims: VisionDims) -> None:
    want = (dims.channels, dims.image_size, dims.image_size)
    if img.shape != want:
        raise ShapeError(f"image shape {img.shape} != expected {want}")


def _block_means(img: np.ndarray, dims: VisionDims) -> np.ndarray:
    """(grid*grid, channels) means over non-overlapping block x block patches."""
    c, g, b = dims.channels, dims.grid, dims.block
    blocks = img.reshape(c, g, b, g, b)
    return blocks.mean(axis=(2, 4)).transpose(1, 2, 0).reshape(g * g, c)


def _image_summary(img: np.ndarray, p: StubExtractorParams) -> np.ndarray:
    d = p.dims
    c, g, b = d.channels, d.grid, d.block
    patches = (
        img.reshape(c, g, b, g, b)
        .transpose(1, 3, 0, 2, 4)
        .reshape(g * g, c * b * b)
    )
    # np.repeat broadcasts each patch's channel mean over that channel's pixels
    centered = patches - np.repeat(_block_means(img, d), b * b, axis=1)
    texture = centered @ p.patch_proj.T                     # (grid^2, texture_dim)
    return np.concatenate([img.mean(axis=(1, 2)), texture.reshape(-1)])


def extract_global_stub(img: np.ndarray, p: StubExtractorParams) -> Tensor:
    """Global-contract features: (n_tokens, token_dim)."""
    _check_image(img, p.dims)
    summary = Tensor(_image_summary(img, p).reshape(1, -1))
    out = add_bias(matmul(summary, p.global_weight), p.global_bias)
    return reshape(out, (p.dims.n_tokens, p.dims.token_dim))


def extract_local_stub(img: np.ndarray, p: StubExtractorParams) -> Tensor:
    """Local-contract features: (local_channels, grid, grid).

    Block means are expressed as contrast against the fixed MID_GRAY level
    before projection so the features are not dominated by a shared
    brightness background; the map stays affine in the pixels, per-cell
    local, and still depends on nothing finer than block means."""
    _check_image(img, p.dims)
    d = p.dims
    means = Tensor(_block_means(img, d) - MID_GRAY)         # (grid^2, channels)
    cells = add_bias(matmul(means, p.local_weight), p.local_bias)
    return permute(reshape(cells, (d.grid, d.grid, d.local_channels)), (2, 0, 1))


def adapt_local(v: Tensor, dims: VisionDims) -> Tensor:
    """Local-to-global adapter: pool -> permute -> pool -> flatten.

    At paper scale: 2560x7x7 -> 2560x1x32 -> 32x1x2560 -> 32x1x768 -> 32x768.
    """
    want = (dims.local_channels, dims.grid, dims.grid)
    if v.shape != want:
        raise ShapeError(f"adapt_local: input shape {v.shape} != expected {want}")
    v = adaptive_avg_pool(v, (1, dims.n_tokens))
    v = permute(v, (2, 1, 0))
    v = adaptive_avg_pool(v, (dims.token_dim,))
    return flatten(v, keep_axis=0)


def fuse(g: Tensor, l_adapted: Tensor, op: str) -> Tensor:
    """Combine global and adapted local features.  multiply/add keep the
    token count; concatenate stacks global rows first, doubling it."""
    if op not in FUSION_OPS:
        raise ValueError(f"unknown fusion op {op!r}; expected one of {FUSION_OPS}")
    if g.shape != l_adapted.shape:
        raise ShapeError(f"fuse: shape mismatch {g.shape} vs {l_adapted.shape}")
    if op == "multiply":
        return mul(g, l_adapted)
    if op == "add":
        return add(g, l_adapted)
    return concat([g, l_adapted], axis=0)


def fused_token_count(op: str, n_tokens: int) -> int:
    return 2 * n_tokens if op == "concatenate" else n_tokens


def sparsity_stats(v: Tensor | np.ndarray) -> dict[str, float]:
    """Order statistics of the elements: mean, quartiles (median-exclusive
    midpoint rule), min, max."""
    arr = (v.data if isinstance(v, Tensor) else np.asarray(v)).reshape(-1)
    if arr.size == 0:
        raise ValueError("sparsity_stats: empty tensor")
    s = np.sort(arr)
    n = s.size

    def median(x):
        m = x.size
        return float(x[m // 2]) if m % 2 else float(0.5 * (x[m // 2 - 1] + x[m // 2]))

    half = n // 2
    lower = s[:half]
    upper = s[n - half:]
    if n == 1:
        q1 = q3 = float(s[0])
    else:
        q1 = median(lower)
        q3 = median(upper)
    return {
        "mean": float(s.mean()),
        "q1": q1,
        "q2": median(s),
        "q3": q3,
        "min": float(s[0]),
        "max": float(s[-1]),
    }
