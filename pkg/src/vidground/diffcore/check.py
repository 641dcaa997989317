"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    """Norm-wise relative error ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.ravel(a)
    b = np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    return [np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in inputs]


def numeric_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    out = []
    for t in inputs:
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = fn().item()
            flat[i] = old - h
            fm = fn().item()
            flat[i] = old
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Largest per-input relative error between tape and finite-difference gradients.

    ``fn`` must read the inputs' ``.data`` afresh on every call; inputs are
    perturbed in place and restored.
    """
    for t in inputs:
        t.data = np.array(t.data, dtype=np.float64)  # own a writable buffer
    ana = analytic_grads(fn, inputs)
    num = numeric_grads(fn, inputs, h)
    return max(relative_error(a, n) for a, n in zip(ana, num))


def directional_check(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    rng: np.random.Generator,
    n_dirs: int = 3,
    h: float = 1e-5,
) -> float:
    """Compare <grad, v> with a central difference along random directions v.

    Cheap stand-in for elementwise checks when inputs hold thousands of entries.
    """
    ana = analytic_grads(fn, inputs)
    base = [np.array(t.data) for t in inputs]
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(t.shape) for t in inputs]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        for t, b, d in zip(inputs, base, dirs):
            t.data = b + h * d
        fp = fn().item()
        for t, b, d in zip(inputs, base, dirs):
            t.data = b - h * d
        fm = fn().item()
        for t, b in zip(inputs, base):
            t.data = b.copy()
        num = (fp - fm) / (2 * h)
        an = sum(float((a * d).sum()) for a, d in zip(ana, dirs))
        worst = max(worst, abs(an - num) / max(abs(an), abs(num), 1e-10))
    return worst
