"""Temporal grounding head: per-frame relevance mask, boundary distributions,
grounding losses and interval derivation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffcore import Tensor, ops
from .encoders import CrossModal, ModelConfig, Params


@dataclass(frozen=True)
class Interval:
    """Continuous [start, end] span in frame coordinates."""

    start: float
    end: float

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"interval end {self.end} before start {self.start}")

    @property
    def length(self) -> float:
        return self.end - self.start

    def frames(self, m: int) -> tuple[int, int]:
        """Inclusive frame range ``floor(start)..ceil(end)`` clipped to the video."""
        lo = max(0, int(math.floor(self.start)))
        hi = min(m - 1, int(math.ceil(self.end)))
        return lo, hi


@dataclass
class GroundingLabel:
    frames: np.ndarray  # binary (m,)
    t_start: int
    t_end: int

    @classmethod
    def from_bounds(cls, t_start: int, t_end: int, m: int) -> "GroundingLabel":
        if not 0 <= t_start <= t_end < m:
            raise ValueError(f"bad boundary labels ({t_start}, {t_end}) for m={m}")
        y = np.zeros(m)
        y[t_start:t_end + 1] = 1.0
        return cls(y, t_start, t_end)


@dataclass
class BoundaryDistribution:
    start: Tensor
    end: Tensor


def init_grounding_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.d
    std_m = 1.0 / np.sqrt(cfg.mask_width * d)
    std_b = 1.0 / np.sqrt(cfg.boundary_width * d)
    return {
        "ground.mask.w": Tensor(rng.standard_normal((cfg.mask_width, d, 1)) * std_m, True, "ground.mask.w"),
        "ground.mask.b": Tensor(np.zeros(1), True, "ground.mask.b"),
        "ground.start.w": Tensor(rng.standard_normal((cfg.boundary_width, d, 1)) * std_b, True, "ground.start.w"),
        "ground.start.b": Tensor(np.zeros(1), True, "ground.start.b"),
        "ground.end.w": Tensor(rng.standard_normal((cfg.boundary_width, d, 1)) * std_b, True, "ground.end.w"),
        "ground.end.b": Tensor(np.zeros(1), True, "ground.end.b"),
    }


def _squeeze_last(x: Tensor) -> Tensor:
    return ops.reshape(x, x.shape[:-1])


def predict_mask(M: CrossModal, params: Params) -> Tensor:
    """Width-w conv over the video rows of M, then sigmoid: (..., m) in (0, 1)."""
    logits = ops.conv1d(M.video, params["ground.mask.w"], params["ground.mask.b"])
    return ops.sigmoid(_squeeze_last(logits))


def predict_boundaries(M: CrossModal, params: Params) -> BoundaryDistribution:
    """Start/end distributions over the m frame positions."""
    V = M.video
    if V.shape[-2] < 2:
        raise ValueError("boundary prediction needs at least two frames")
    s = _squeeze_last(ops.conv1d(V, params["ground.start.w"], params["ground.start.b"]))
    e = _squeeze_last(ops.conv1d(V, params["ground.end.w"], params["ground.end.b"]))
    return BoundaryDistribution(ops.softmax(s), ops.softmax(e))


def frame_loss(P: Tensor, Y) -> Tensor:
    """Summed per-frame BCE; batched input gives one value per sample."""
    return ops.binary_cross_entropy(P, Y)


def clip_loss(B: BoundaryDistribution, t_start, t_end) -> Tensor:
    return (ops.cross_entropy(B.start, t_start) + ops.cross_entropy(B.end, t_end)) * 0.5


def grounding_loss(l_clip: Tensor, l_frame: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return ops.as_tensor(l_clip) * lam + l_frame


def derive_timestamps(mask, start_dist, end_dist, alpha: float) -> Interval:
    """Combine the thresholded mask extent with the boundary argmaxes.

    Falls back to the argmaxes alone when no frame clears ``alpha``; swaps an
    inverted pair; clamps to [0, m-1].
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    ps = np.asarray(start_dist.data if isinstance(start_dist, Tensor) else start_dist)
    pe = np.asarray(end_dist.data if isinstance(end_dist, Tensor) else end_dist)
    m = mask.shape[-1]
    a_s, a_e = int(np.argmax(ps)), int(np.argmax(pe))
    hits = np.flatnonzero(mask > alpha)
    if hits.size:
        ts = 0.5 * (hits[0] + a_s)
        te = 0.5 * (hits[-1] + a_e)
    else:
        ts, te = float(a_s), float(a_e)
    if ts > te:
        ts, te = te, ts
    ts = min(max(ts, 0.0), m - 1.0)
    te = min(max(te, 0.0), m - 1.0)
    return Interval(float(ts), float(te))
