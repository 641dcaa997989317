"""Pick history turns by temporal overlap with the current question."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .grounding import Interval


@dataclass
class TurnRecord:
    index: int  # 1-based
    question: list[int]
    answer: list[int]
    interval: Interval


@dataclass
class TurnSelection:
    chosen: list[int] = field(default_factory=list)  # turn indices, chronological
    scores: dict[int, float] = field(default_factory=dict)
    supplemented: dict[int, bool] = field(default_factory=dict)


def interval_iou(a: Interval, b: Interval) -> float:
    """Intersection over union of two closed spans.

    Two zero-length spans score 1 when they coincide and 0 otherwise.
    """
    inter = max(0.0, min(a.end, b.end) - max(a.start, b.start))
    union = max(a.end, b.end) - min(a.start, b.start)
    if union <= 0.0:
        return 1.0 if (a.start == b.start and a.end == b.end) else 0.0
    if a.length == 0.0 or b.length == 0.0:
        return 0.0
    return inter / (a.length + b.length - inter)


def select_turns(history: Sequence[TurnRecord], current: Interval, k: int) -> TurnSelection:
    """Top-k history turns by IoU with ``current``.

    Equal scores go to the more recent turn, and when fewer than k turns
    overlap at all the remainder is filled with the most recent unselected
    turns. Chosen indices come back in chronological order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scored = [(interval_iou(t.interval, current), t.index) for t in history]
    ranked = sorted(scored, key=lambda s: (-s[0], -s[1]))[:k]
    sel = TurnSelection()
    for iou, idx in ranked:
        sel.scores[idx] = iou
        sel.supplemented[idx] = iou == 0.0
    sel.chosen = sorted(sel.scores)
    return sel


def nearest_turns(history: Sequence[TurnRecord], k: int) -> TurnSelection:
    """The k most recent turns, the no-grounding baseline."""
    recent = sorted(t.index for t in history)[-k:] if k > 0 else []
    return TurnSelection(chosen=recent, scores={i: 0.0 for i in recent},
                         supplemented={i: True for i in recent})
