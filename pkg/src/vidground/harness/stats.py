"""Where in the video do intervals fall? Position-ratio coverage histogram."""
from __future__ import annotations

import csv
import io
from typing import Iterable, Sequence

import numpy as np

from ..grounding import Interval


def frame_span(interval: Interval) -> tuple[float, float]:
    """Inclusive frame indices ``[ts, te]`` as the time span ``[ts, te + 1)``."""
    return interval.start, interval.end + 1.0


def coverage_histogram(spans: Iterable[tuple[float, float]], durations: Iterable[float], bin_width: float = 0.05) -> np.ndarray:
    """Percent of total covered time falling in each position-ratio bin.

    Each span ``(start, end)`` in time units is mapped to ratios of its
    video's duration and its mass spread uniformly over that range, so a
    longer span contributes more. The result sums to 100 (or is all zeros
    when every span is empty).
    """
    n_bins = int(round(1.0 / bin_width))
    if not np.isclose(n_bins * bin_width, 1.0):
        raise ValueError("bin_width must divide 1")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    mass = np.zeros(n_bins)
    for (s, e), dur in zip(spans, durations):
        if dur <= 0:
            raise ValueError("duration must be positive")
        lo, hi = max(0.0, s / dur), min(1.0, e / dur)
        if hi <= lo:
            continue
        mass += np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    total = mass.sum()
    return mass * (100.0 / total) if total > 0 else mass


def histogram_csv(hist: Sequence[float]) -> str:
    n = len(hist)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_start", "bin_end", "percent"])
    for i, v in enumerate(hist):
        w.writerow([f"{i / n:.2f}", f"{(i + 1) / n:.2f}", f"{v:.6f}"])
    return buf.getvalue()
