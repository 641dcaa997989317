"""Contrastive clip selection: positive/negative clip sampling and the
pull/push losses on pooled cross-modal encodings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import Tensor, ops
from .encoders import CrossModal, ModelConfig, Params, concat_features, cross_encode, encode_video, slice_video
from .grounding import Interval
from .turnselect import TurnRecord, interval_iou, nearest_turns, select_turns

NEGATIVE_IOU = 0.1


@dataclass
class ClipSampleSet:
    gt: Interval
    positive: Interval
    negative: Interval
    fallback: bool = False


def sample_clips(gt: Interval, m: int, margin_ratio: float, rng: np.random.Generator) -> ClipSampleSet:
    """Positive = ``gt`` widened by ``margin_ratio * m`` per side; negative = a
    same-length span overlapping ``gt`` with IoU < 0.1.

    When no such placement exists the half of the video away from ``gt``'s
    centre is used instead and ``fallback`` is set.
    """
    if margin_ratio <= 0:
        raise ValueError("margin_ratio must be positive")
    last = m - 1.0
    pad = margin_ratio * m
    pos = Interval(max(0.0, gt.start - pad), min(last, gt.end + pad))
    L = gt.length
    starts = np.arange(0.0, last - L + 1e-9, 1.0)
    ok = [s for s in starts if interval_iou(Interval(s, s + L), gt) < NEGATIVE_IOU]
    if ok:
        s = float(ok[int(rng.integers(len(ok)))])
        return ClipSampleSet(gt, pos, Interval(s, s + L))
    mid = last / 2.0
    centre = 0.5 * (gt.start + gt.end)
    neg = Interval(mid, last) if centre < mid else Interval(0.0, mid)
    return ClipSampleSet(gt, pos, neg, fallback=True)


def pooled(M: CrossModal) -> Tensor:
    """Mean over the visible rows of a cross-modal encoding, each row first
    re-standardised without a learned gain.

    The standardisation keeps the pooled vectors on a fixed scale, so the
    push term cannot be driven down just by inflating the encoder's output
    gain.
    """
    d = M.M.shape[-1]
    rows = ops.layer_norm(M.M, _ones(d), _zeros(d))
    return ops.masked_mean_rows(rows, M.key_mask)


def _ones(d: int) -> Tensor:
    return Tensor(np.ones(d))


def _zeros(d: int) -> Tensor:
    return Tensor(np.zeros(d))


@dataclass
class ContrastiveTerms:
    plus: Tensor
    minus: Tensor
    total: Tensor


def contrastive_terms(M_use: CrossModal, M_pos: CrossModal, M_neg: CrossModal, beta: float) -> ContrastiveTerms:
    anchor = pooled(M_use)
    l_plus = ops.mse(anchor, pooled(M_pos))
    l_minus = 1.0 - ops.mse(anchor, pooled(M_neg))
    return ContrastiveTerms(l_plus, l_minus, contrastive_total(l_plus, l_minus, beta))


def contrastive_total(l_plus, l_minus, beta: float) -> Tensor:
    """L+ + beta * L-."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return ops.as_tensor(l_plus) + ops.as_tensor(l_minus) * beta


def contrastive_loss(
    M_use: CrossModal,
    T_use: Tensor,
    text_keep: np.ndarray,
    features,
    pos_mask: np.ndarray,
    neg_mask: np.ndarray,
    beta: float,
    params: Params,
    cfg: ModelConfig,
) -> ContrastiveTerms:
    """Re-encode the video under the positive and negative frame masks with
    the same text, then compare pooled encodings against ``M_use``."""
    n = T_use.shape[-2]

    def encode(mask):
        feats = features
        if cfg.video_slicing:
            feats, mask = slice_video(features, mask)
        V = encode_video(feats, params, cfg, frame_mask=mask)
        keep = np.concatenate([text_keep, np.asarray(mask, dtype=bool)], axis=-1)
        return cross_encode(concat_features(T_use, V), keep, params, cfg, n)

    return contrastive_terms(M_use, encode(pos_mask), encode(neg_mask), beta)


def final_loss(l_generate, l_contrastive, delta: float) -> Tensor:
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return ops.as_tensor(l_generate) + ops.as_tensor(l_contrastive) * delta


@dataclass
class TextContrast:
    positive: list[int]
    negative: list[int]


def sample_turn_contrast(
    history: Sequence[TurnRecord],
    current: Interval | None,
    k: int,
    mode: str = "off",
) -> TextContrast | None:
    """Turn-level contrast pair: the top k+1 turns versus the rest.

    Ranking follows IoU with ``current`` (nearest turns when it is None).
    Returns None when disabled or when no turn is left over for the negative.
    """
    if mode not in ("off", "on"):
        raise ValueError(f"unknown text contrast mode {mode!r}")
    if mode == "off" or len(history) <= k + 1:
        return None
    sel = nearest_turns(history, k + 1) if current is None else select_turns(history, current, k + 1)
    rest = sorted(t.index for t in history if t.index not in sel.scores)
    return TextContrast(sel.chosen, rest)
