"""Differentiable primitives.

All ops take :class:`Tensor` (or array-likes, treated as constants) and
return a new :class:`Tensor`. Batched inputs broadcast over leading axes.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import DTYPE, Tensor, make_result

EPS = 1e-7


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=DTYPE))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data / b.data, (a, b), bw, "div")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return make_result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    xd = x.data
    x2 = xd * xd
    t = np.tanh(_GELU_C * xd * (1.0 + 0.044715 * x2))
    y = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_result(y, (x,), bw, "gelu")


def where_rows(x: Tensor, keep: np.ndarray) -> Tensor:
    """Zero the rows of ``x`` (axis -2) where ``keep`` is False, exactly."""
    keep = np.asarray(keep, dtype=bool)[..., None]
    y = np.where(keep, x.data, 0.0)
    return make_result(y, (x,), lambda g: (np.where(keep, g, 0.0),), "where_rows")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(Ellipsis), type(None))) for i in items)


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape
    basic = _is_basic(index)

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_result(x.data[index], (x,), bw, "getitem")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), xs, bw, "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_result(np.stack([x.data for x in xs], axis=axis), xs, bw, "stack")


# ---------------------------------------------------------------- reductions

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return make_result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def masked_mean_rows(x: Tensor, keep: np.ndarray) -> Tensor:
    """Mean over axis -2 restricted to rows where ``keep`` is True."""
    keep = np.asarray(keep, dtype=DTYPE)[..., None]
    count = keep.sum(axis=-2)
    if np.any(count == 0):
        raise ValueError("masked mean over zero rows")
    y = (x.data * keep).sum(axis=-2) / count
    return make_result(y, (x,), lambda g: (keep * (g / count)[..., None, :],), "masked_mean_rows")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` of shape (in, out)."""
    y = x.data @ w.data
    if b is not None:
        y = y + b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ w.data.T) if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return make_result(y, inputs, bw, "linear")


# ---------------------------------------------------------------- normalisation / attention

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), bw, "softmax")


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis with masked entries treated as -inf.

    ``mask`` broadcasts against ``logits``; masked outputs are exactly 0.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask)
    if mask.dtype != bool:
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        mask = mask.astype(bool)
    if not mask.any(axis=-1).all():
        raise ValueError("degenerate attention row: every position masked")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result(y, (logits,), bw, "masked_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def bw(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gxh = g * gamma.data
            gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                        - xhat * (gxh * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return make_result(y, (x, gamma, beta), bw, "layer_norm")


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("token id outside embedding table")
    shape = table.shape

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return make_result(table.data[ids], (table,), bw, "embedding")


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def positional_table(length: int, d: int) -> np.ndarray:
    key = (length, d)
    if key not in _PE_CACHE:
        pos = np.arange(length, dtype=DTYPE)[:, None]
        i = np.arange(0, d, 2, dtype=DTYPE)
        angle = pos / np.power(10000.0, i / d)
        pe = np.zeros((length, d), dtype=DTYPE)
        pe[:, 0::2] = np.sin(angle)
        pe[:, 1::2] = np.cos(angle[:, : d // 2])
        pe.setflags(write=False)
        _PE_CACHE[key] = pe
    return _PE_CACHE[key]


def add_positional(x: Tensor, scale: float = 1.0) -> Tensor:
    """Add the sinusoidal position table along axis -2."""
    pe = positional_table(x.shape[-2], x.shape[-1])
    return make_result(x.data + scale * pe, (x,), lambda g: (g,), "add_positional")


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 1-D convolution over axis -2.

    x: (..., m, d), kernel: (w, d, d_out) with w odd.
    """
    w = kernel.shape[0]
    if w % 2 == 0:
        raise ValueError(f"conv1d kernel width must be odd, got {w}")
    if kernel.shape[1] != x.shape[-1]:
        raise ValueError("conv1d kernel input width does not match features")
    m = x.shape[-2]
    pad = (w - 1) // 2
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, widths)
    y = xp[..., 0:m, :] @ kernel.data[0]
    for k in range(1, w):
        y = y + xp[..., k:k + m, :] @ kernel.data[k]
    if bias is not None:
        y = y + bias.data

    def bw(g):
        gx = gk = gb = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for k in range(w):
                gxp[..., k:k + m, :] += g @ kernel.data[k].T
            gx = gxp[..., pad:pad + m, :]
        if kernel.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            gk = np.stack([xp[..., k:k + m, :].reshape(-1, xp.shape[-1]).T @ g2 for k in range(w)])
        if bias is not None and bias.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return (gx, gk, gb) if bias is not None else (gx, gk)

    inputs = (x, kernel, bias) if bias is not None else (x, kernel)
    return make_result(y, inputs, bw, "conv1d")


# ---------------------------------------------------------------- losses

def binary_cross_entropy(p: Tensor, y) -> Tensor:
    """Sum over the last axis of -[y ln p + (1-y) ln(1-p)], p clipped to [EPS, 1-EPS]."""
    p = as_tensor(p)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=DTYPE)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("binary labels must be 0 or 1")
    if y.shape != p.shape:
        raise ValueError(f"label shape {y.shape} != prediction shape {p.shape}")
    pc = np.clip(p.data, EPS, 1.0 - EPS)
    inside = (p.data > EPS) & (p.data < 1.0 - EPS)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)).sum(axis=-1)

    def bw(g):
        dp = (-(y / pc) + (1.0 - y) / (1.0 - pc)) * inside
        return (np.expand_dims(g, -1) * dp,)

    return make_result(np.asarray(loss), (p,), bw, "bce")


def cross_entropy(dist: Tensor, label) -> Tensor:
    """-ln dist[label] along the last axis, with EPS clipping.

    ``label`` has shape ``dist.shape[:-1]``; output has that shape too.
    """
    dist = as_tensor(dist)
    label = np.asarray(label, dtype=np.int64)
    m = dist.shape[-1]
    if label.shape != dist.shape[:-1]:
        raise ValueError(f"label shape {label.shape} does not match {dist.shape[:-1]}")
    if label.size and (label.min() < 0 or label.max() >= m):
        raise IndexError(f"label outside [0, {m})")
    picked = np.take_along_axis(dist.data, label[..., None], axis=-1)[..., 0]
    pc = np.clip(picked, EPS, None)

    def bw(g):
        out = np.zeros(dist.shape, dtype=DTYPE)
        coef = -g / pc * (picked > EPS)
        np.put_along_axis(out, label[..., None], coef[..., None], axis=-1)
        return (out,)

    return make_result(np.asarray(-np.log(pc)), (dist,), bw, "cross_entropy")


def softmax_cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean token cross-entropy from raw logits, skipping ``ignore_index``."""
    targets = np.asarray(targets, dtype=np.int64)
    valid = np.ones(targets.shape, dtype=bool) if ignore_index is None else targets != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no target tokens to score")
    safe = np.where(valid, targets, 0)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * valid).sum() / count

    def bw(g):
        p = np.exp(logp)
        np.put_along_axis(p, safe[..., None],
                          np.take_along_axis(p, safe[..., None], axis=-1) - 1.0, axis=-1)
        return (p * (valid[..., None] * (g / count)),)

    return make_result(np.asarray(loss), (logits,), bw, "softmax_ce")


def mse(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def bw(g):
        ga = 2.0 * g * diff / n
        return ga, -ga

    return make_result(np.asarray((diff * diff).mean()), (a, b), bw, "mse")
