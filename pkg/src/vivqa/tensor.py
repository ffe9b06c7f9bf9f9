"""Dense n-dimensional tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every differentiable op attaches its parents and
a local backward closure to the output tensor.  `backward(loss)` walks the
graph once in reverse topological order, accumulates total derivatives into
requires_grad leaves, then clears the graph so a second backward on the same
loss is a usage error.

Broadcasting is deliberately restricted: elementwise ops demand identical
shapes, the single sanctioned broadcast is the bias row in `add_bias`.
64-bit is the default dtype; 32-bit is allowed for training speed but all
gradient checks assume 64-bit.
"""
from __future__ import annotations

import functools
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ShapeError, UsageError
from .rng import RngStream

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Additive attention-mask value: exp(x - max) underflows to exactly 0.0.
MASK_VALUE = -1e30

_debug_checks = False

# Nodes visited across all backward passes; the freeze ablation compares this.
_backward_node_visits = 0


def set_debug_checks(on: bool) -> None:
    global _debug_checks
    _debug_checks = bool(on)


def backward_node_visits() -> int:
    return _backward_node_visits


def reset_backward_node_visits() -> None:
    global _backward_node_visits
    _backward_node_visits = 0


def _check_finite(arr: np.ndarray) -> None:
    if _debug_checks and not np.all(np.isfinite(arr)):
        raise FloatingPointError("non-finite value produced by tensor op")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_backward_done")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward_fn: Callable | None = None
        self._backward_done = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _node(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(data)
    req = any(p.requires_grad for p in parents)
    out = Tensor(data)
    out.requires_grad = req
    if req:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias: x[..., d] + b[d].  The one permitted broadcast."""
    bd = b.data.reshape(-1)
    if x.shape[-1] != bd.shape[0]:
        raise ShapeError(f"add_bias: last axis {x.shape} vs bias {b.shape}")
    axes = tuple(range(x.data.ndim - 1))
    return _node(
        x.data + bd,
        (x, b),
        lambda g: (g, g.sum(axis=axes).reshape(b.shape)),
    )


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


# ---------------------------------------------------------------------------
# Structural ops


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty part list")
    ref = parts[0].shape
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} vs {p.shape} on axis {axis}")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > t.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {start + length}) outside axis {axis} of {t.shape}")
    idx = [slice(None)] * t.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = t.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _node(t.data[idx].copy(), (t,), bwd)


def permute(t: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(t.data.ndim)):
        raise ValueError(f"permute: {axes} is not a permutation of axes of rank {t.data.ndim}")
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(t.data, axes).copy(), (t,), lambda g: (np.transpose(g, inv).copy(),))


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    old = t.shape
    return _node(t.data.reshape(shape).copy(), (t,), lambda g: (g.reshape(old).copy(),))


def flatten(t: Tensor, keep_axis: int = 0) -> Tensor:
    """Collapse all axes except keep_axis (row-major) into one trailing axis."""
    if t.data.ndim < 2:
        raise ShapeError(f"flatten: rank >= 2 required, got {t.shape}")
    if keep_axis != 0:
        order = (keep_axis,) + tuple(i for i in range(t.data.ndim) if i != keep_axis)
        t = permute(t, order)
    return reshape(t, (t.shape[0], -1))


# ---------------------------------------------------------------------------
# Adaptive average pooling

@functools.lru_cache(maxsize=None)
def _pool_matrix(n: int, m: int) -> np.ndarray:
    """m x n averaging matrix: output bin i averages inputs
    [floor(i*n/m), ceil((i+1)*n/m)).  Bins overlap when m > n."""
    if m <= 0:
        raise ValueError(f"adaptive_avg_pool: target size must be positive, got {m}")
    w = np.zeros((m, n))
    for i in range(m):
        lo = (i * n) // m
        hi = -((-(i + 1) * n) // m)  # ceil
        w[i, lo:hi] = 1.0 / (hi - lo)
    w.setflags(write=False)  # cached and shared between calls
    return w


def adaptive_avg_pool(t: Tensor, out_sizes: Sequence[int]) -> Tensor:
    """Pool the trailing len(out_sizes) axes to the given sizes."""
    out_sizes = tuple(int(s) for s in out_sizes)
    rank = t.data.ndim
    if len(out_sizes) > rank:
        raise ShapeError(f"adaptive_avg_pool: {len(out_sizes)} target axes on rank-{rank} tensor")
    first = rank - len(out_sizes)
    mats = [_pool_matrix(t.shape[first + j], m) for j, m in enumerate(out_sizes)]

    def apply(x, transposed: bool):
        for j, w in enumerate(mats):
            axis = first + j
            wt = w.T if transposed else w
            x = np.moveaxis(np.tensordot(x, wt, axes=([axis], [1])), -1, axis)
        return x

    return _node(apply(t.data, False), (t,), lambda g: (apply(g, True),))


# ---------------------------------------------------------------------------
# Nonlinearities and normalization


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    return _node(y, (t,), lambda g: (g * (1.0 - y * y),))


def gelu(t: Tensor) -> Tensor:
    """Exact Gaussian-CDF GELU: x * Phi(x)."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return _node(x * cdf, (t,), lambda g: (g * (cdf + x * pdf),))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (t,), bwd)


def layer_norm(t: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = t.shape[-1]
    if gamma.data.reshape(-1).shape[0] != d or beta.data.reshape(-1).shape[0] != d:
        raise ShapeError(
            f"layer_norm: last axis {t.shape} vs gamma {gamma.shape} / beta {beta.shape}"
        )
    x = t.data
    gd = gamma.data.reshape(-1)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(g):
        lead = tuple(range(x.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead).reshape(gamma.shape)
        dbeta = g.sum(axis=lead).reshape(beta.shape)
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return (dx, dgamma, dbeta)

    return _node(xhat * gd + beta.data.reshape(-1), (t, gamma, beta), bwd)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, key_bias: np.ndarray,
                         heads: int, weights_sink: list | None = None) -> Tensor:
    """Scaled dot-product attention over all heads in one graph node.

    q, k, v are (rows, heads*head_dim); columns are laid out head-major, so
    head h owns columns [h*head_dim, (h+1)*head_dim).  `key_bias` (rows,) is
    added to every score row before the softmax; a large negative bias drives
    a key's weight to exactly zero.  `weights_sink`, when given, receives the
    (heads, rows, rows) attention-weight array for inspection.
    """
    if q.data.ndim != 2 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"multi_head_attention: q/k/v shapes {q.shape}/{k.shape}/{v.shape}")
    rows, width = q.shape
    if width % heads != 0:
        raise ShapeError(f"multi_head_attention: width {width} not divisible by {heads} heads")
    d = width // heads
    bias = np.asarray(key_bias, dtype=np.float64).reshape(-1)
    if bias.shape[0] != rows:
        raise ShapeError(f"multi_head_attention: bias length {bias.shape[0]} vs {rows} rows")
    inv_sqrt_d = 1.0 / np.sqrt(d)

    def split_heads(arr):
        return arr.reshape(rows, heads, d).transpose(1, 0, 2)   # (H, S, d)

    def merge_heads(arr):
        return arr.transpose(1, 0, 2).reshape(rows, width)

    qd, kd, vd = split_heads(q.data), split_heads(k.data), split_heads(v.data)
    scores = qd @ kd.transpose(0, 2, 1) * inv_sqrt_d + bias[None, None, :]
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    w = e / e.sum(axis=-1, keepdims=True)                       # (H, S, S)
    if weights_sink is not None:
        weights_sink.append(w.copy())

    def bwd(g):
        gout = split_heads(g)
        dw = gout @ vd.transpose(0, 2, 1)
        dv = w.transpose(0, 2, 1) @ gout
        ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
        dq = (ds @ kd) * inv_sqrt_d
        dk = (ds.transpose(0, 2, 1) @ qd) * inv_sqrt_d
        return (merge_heads(dq), merge_heads(dk), merge_heads(dv))

    return _node(merge_heads(w @ vd), (q, k, v), bwd)


# ---------------------------------------------------------------------------
# Lookup, loss, drop path


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise IndexError(f"embedding_lookup: id {bad} outside table of size {vocab}")
    tshape = table.shape

    def bwd(g):
        dt = np.zeros(tshape, dtype=g.dtype)
        np.add.at(dt, ids, g)
        return (dt,)

    return _node(table.data[ids].copy(), (table,), bwd)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], log-space.  logits: (C,) or (1, C)."""
    flat = logits.data.reshape(-1)
    c = flat.shape[0]
    target = int(target)
    if target < 0 or target >= c:
        raise IndexError(f"cross_entropy: target {target} outside {c} classes")
    m = flat.max()
    lse = m + np.log(np.exp(flat - m).sum())
    loss = lse - flat[target]
    probs = np.exp(flat - lse)
    shape = logits.shape

    def bwd(g):
        d = probs.copy()
        d[target] -= 1.0
        return (float(g) * d.reshape(shape),)

    return _node(np.asarray(loss), (logits,), bwd)


def drop_path(x: Tensor, rate: float, training: bool, rng: RngStream | None = None) -> Tensor:
    """Stochastic depth on one residual branch: keep-or-kill the whole branch
    per sample, rescaled by 1/(1-rate) so the expectation is preserved."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"drop_path: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return scale(x, 1.0)
    if rng is None:
        raise UsageError("drop_path: training mode needs an RngStream")
    keep = rng.bernoulli(1.0 - rate)
    return scale(x, (1.0 / (1.0 - rate)) if keep else 0.0)


# ---------------------------------------------------------------------------
# Backward engine and gradient check


def backward(loss: Tensor) -> None:
    global _backward_node_visits
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._backward_done:
        raise UsageError("backward: already called on this loss; run a new forward pass")
    # iterative reverse topological order
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        _backward_node_visits += 1
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is not None:
            parent_grads = node._backward_fn(g)
            for p, pg in zip(node._parents, parent_grads):
                if not p.requires_grad or pg is None:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
            node._backward_fn = None
            node._parents = ()
        else:
            node.grad = g if node.grad is None else node.grad + g
    loss._backward_done = True


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative error of the tape gradient of scalar f vs central differences."""
    leaf = Tensor(x.data.astype(np.float64).copy(), requires_grad=True)
    loss = f(leaf)
    backward(loss)
    analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad

    numeric = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(leaf.data.copy())).data)
        flat[i] = orig - h
        fm = float(f(Tensor(leaf.data.copy())).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
