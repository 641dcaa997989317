"""Inference pipeline (ground, select turns, answer) and split-level scoring."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..diffcore import Tensor, no_grad
from ..encoders import EOS
from ..generation import beam_search, model_step_fn
from ..grounding import Interval, derive_timestamps
from ..metrics import MetricReport, recall_at_iou, score_corpus, IOU_THRESHOLDS
from ..synthdata import Corpus, SyntheticDialog
from . import checkpoint as ckpt_io
from .config import RunConfig, from_dict
from .model import Params, encode_use, ground_forward, history_records, make_generation_batch, make_grounding_batch


@dataclass
class Model:
    """Trained weights ready for inference."""

    run: RunConfig
    params: Params
    grounder: Params

    @classmethod
    def from_checkpoint(cls, ck: ckpt_io.Checkpoint, run: RunConfig | None = None) -> "Model":
        run = run or from_dict(ck.config)
        params = {k: Tensor(v, name=k) for k, v in sorted(ck.group("params.").items())}
        g = ck.group("grounder.")
        grounder = {k: Tensor(v, name=k) for k, v in sorted(g.items())} if g else params
        return cls(run, params, grounder)

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_checkpoint(ckpt_io.load(path))

    @classmethod
    def from_trainer(cls, trainer) -> "Model":
        return cls.from_checkpoint(trainer.to_checkpoint(), trainer.run)


def ground_items(model: Model, corpus: Corpus, items, batch_size: int = 64) -> list[Interval]:
    """Predicted interval for each ``(dialog, turn)`` item."""
    cfg = model.run.model
    out: list[Interval] = []
    for lo in range(0, len(items), batch_size):
        batch = make_grounding_batch(corpus, items[lo:lo + batch_size], cfg)
        with no_grad():
            _, P, bd = ground_forward(model.grounder, cfg, batch)
        for j in range(P.shape[0]):
            out.append(derive_timestamps(P.data[j], bd.start.data[j], bd.end.data[j], cfg.alpha))
    return out


def ground_dialogs(model: Model, corpus: Corpus, dialogs: Sequence[SyntheticDialog], batch_size: int = 64) -> list[list[Interval]]:
    items = [(d, i) for d in dialogs for i in range(len(d.turns))]
    flat = ground_items(model, corpus, items, batch_size)
    out, pos = [], 0
    for d in dialogs:
        out.append(flat[pos:pos + len(d.turns)])
        pos += len(d.turns)
    return out


def answer(model: Model, corpus: Corpus, dialog: SyntheticDialog, turn: int,
           intervals: Sequence[Interval], beam_size: int | None = None) -> list[int]:
    """Beam-search the answer to ``turn`` given per-turn intervals (history and current)."""
    run = model.run
    batch = make_generation_batch(corpus, [(dialog, turn)], run, [list(intervals[:turn])], [intervals[turn]])
    with no_grad():
        M, _, _ = encode_use(model.params, run.model, batch.tokens, batch.segments, batch.features, batch.video_mask)
    hyp = beam_search(model_step_fn(M, model.params, run.model), beam_size or run.model.beam_size, run.model.decoder_cap)
    return [t for t in hyp.tokens[1:] if t != EOS]


@dataclass
class EvalResult:
    report: MetricReport
    hypotheses: list[list[int]] = field(default_factory=list)
    references: list[list[int]] = field(default_factory=list)
    intervals: list[list[Interval]] = field(default_factory=list)


def evaluate(model: Model, corpus: Corpus, dialogs: Sequence[SyntheticDialog], oracle: bool = False,
             beam_size: int | None = None, batch_size: int = 64) -> EvalResult:
    """Answer the final turn of each dialog and score the split.

    ``oracle`` injects ground-truth intervals in place of predictions. R@1 is
    measured on the predicted intervals of every turn either way.
    """
    if not dialogs:
        raise ValueError("evaluation split is empty")
    predicted = ground_dialogs(model, corpus, dialogs, batch_size)
    used = [[t.interval for t in d.turns] for d in dialogs] if oracle else predicted
    hyps, refs = [], []
    for d, ivs in zip(dialogs, used):
        last = len(d.turns) - 1
        hyps.append(answer(model, corpus, d, last, ivs, beam_size))
        refs.append(list(d.turns[last].a))
    preds = [iv for ivs in predicted for iv in ivs]
    labels = [t.interval for d in dialogs for t in d.turns]
    report = score_corpus(hyps, [[r] for r in refs], preds, labels)
    return EvalResult(report, hyps, refs, predicted)


def grounding_recall(model: Model, corpus: Corpus, dialogs: Sequence[SyntheticDialog], batch_size: int = 64) -> dict[float, float]:
    preds = [iv for ivs in ground_dialogs(model, corpus, dialogs, batch_size) for iv in ivs]
    labels = [t.interval for d in dialogs for t in d.turns]
    return {mu: recall_at_iou(preds, labels, mu) for mu in IOU_THRESHOLDS}
