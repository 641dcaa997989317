"""Whole-model forward passes over batches of dialog turns."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..contrastive import ContrastiveTerms, contrastive_loss, contrastive_terms, final_loss, sample_clips
from ..diffcore import Tensor
from ..encoders import (
    PAD, CrossModal, ModelConfig, build_text, concat_features, cross_encode, encode_text,
    encode_video, init_encoder_params, pad_batch, slice_video,
)
from ..generation import assemble_inputs, decode_train, interval_to_mask
from ..grounding import (
    BoundaryDistribution, Interval, clip_loss, frame_loss, grounding_loss, init_grounding_params,
    predict_boundaries, predict_mask,
)
from ..generation import init_decoder_params
from ..synthdata import Corpus, SyntheticDialog
from ..turnselect import TurnRecord, TurnSelection, nearest_turns, select_turns
from .config import RunConfig

Params = dict[str, Tensor]


def init_params(cfg: ModelConfig, seed: int) -> Params:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))
    p: Params = {}
    p.update(init_encoder_params(cfg, rng))
    p.update(init_grounding_params(cfg, rng))
    p.update(init_decoder_params(cfg, rng))
    return dict(sorted(p.items()))


def history_records(dialog: SyntheticDialog, upto: int, intervals=None) -> list[TurnRecord]:
    """Turns before ``upto`` (0-based) as 1-based records.

    ``intervals`` overrides the ground-truth spans (e.g. with predictions).
    """
    out = []
    for i in range(upto):
        t = dialog.turns[i]
        iv = t.interval if intervals is None else intervals[i]
        out.append(TurnRecord(i + 1, t.q, t.a, iv))
    return out


# ---------------------------------------------------------------- grounding batches

@dataclass
class GroundingBatch:
    tokens: np.ndarray
    segments: np.ndarray
    features: np.ndarray
    frames: np.ndarray  # (B, m) binary labels
    t_start: np.ndarray
    t_end: np.ndarray


def grounding_text(dialog: SyntheticDialog, turn: int, cfg: ModelConfig):
    hist = history_records(dialog, turn)
    chosen = nearest_turns(hist, cfg.grounding_history).chosen if cfg.grounding_history else []
    pairs = [(dialog.turns[i - 1].q, dialog.turns[i - 1].a) for i in chosen]
    return build_text(dialog.turns[turn].q, pairs, cfg)


def make_grounding_batch(corpus: Corpus, items, cfg: ModelConfig) -> GroundingBatch:
    toks, segs, feats, frames, ts, te = [], [], [], [], [], []
    for dialog, turn in items:
        ids, sg = grounding_text(dialog, turn, cfg)
        toks.append(ids)
        segs.append(sg)
        feats.append(corpus.features(dialog))
        t = dialog.turns[turn]
        lab = t.label(dialog.m)
        frames.append(lab.frames)
        ts.append(t.ts)
        te.append(t.te)
    return GroundingBatch(pad_batch(toks, PAD), pad_batch(segs, 2), np.stack(feats),
                          np.stack(frames), np.asarray(ts), np.asarray(te))


def ground_forward(params: Params, cfg: ModelConfig, batch: GroundingBatch):
    T, keep = encode_text(batch.tokens, params, cfg, batch.segments)
    V = encode_video(batch.features, params, cfg)
    key = np.concatenate([keep, np.ones(batch.features.shape[:2], dtype=bool)], axis=1)
    M = cross_encode(concat_features(T, V), key, params, cfg, T.shape[1])
    return M, predict_mask(M, params), predict_boundaries(M, params)


@dataclass
class GroundingLosses:
    frame: Tensor
    clip: Tensor
    total: Tensor
    mask: Tensor
    bounds: BoundaryDistribution


def grounding_losses(params: Params, cfg: ModelConfig, batch: GroundingBatch) -> GroundingLosses:
    _, P, bd = ground_forward(params, cfg, batch)
    lf = frame_loss(P, batch.frames).mean()
    lc = clip_loss(bd, batch.t_start, batch.t_end).mean()
    return GroundingLosses(lf, lc, grounding_loss(lc, lf, cfg.lam), P, bd)


# ---------------------------------------------------------------- generation batches

@dataclass
class GenerationBatch:
    tokens: np.ndarray
    segments: np.ndarray
    features: np.ndarray
    video_mask: np.ndarray
    gold: np.ndarray
    gt: list[Interval]
    turns: list[list[int]]
    text_pos: tuple[np.ndarray, np.ndarray] | None = None
    text_neg: tuple[np.ndarray, np.ndarray] | None = None
    text_contrast_rows: np.ndarray | None = None


def select_for(run: RunConfig, history: list[TurnRecord], current: Interval) -> TurnSelection:
    if run.turn_selection:
        return select_turns(history, current, run.model.k)
    return nearest_turns(history, run.model.k)


def make_generation_batch(
    corpus: Corpus,
    items,
    run: RunConfig,
    history_intervals=None,
    current_intervals=None,
) -> GenerationBatch:
    """Assemble decoder inputs for ``(dialog, turn)`` items.

    Intervals default to ground truth (training); pass predictions for
    inference. ``history_intervals[j]`` lists per-turn spans of item j.
    """
    from ..contrastive import sample_turn_contrast

    cfg = run.model
    toks, segs, feats, vmask, gold, gts, turns = [], [], [], [], [], [], []
    tpos, tneg, trows = [], [], []
    for j, (dialog, turn) in enumerate(items):
        hint = None if history_intervals is None else history_intervals[j]
        hist = history_records(dialog, turn, hint)
        cur_gt = dialog.turns[turn].interval
        cur = cur_gt if current_intervals is None else current_intervals[j]
        sel = select_for(run, hist, cur)
        inp = assemble_inputs(dialog.turns[turn].q, hist, sel, cur if run.video_mask else None, dialog.m, cfg)
        toks.append(inp.tokens)
        segs.append(inp.segments)
        vmask.append(inp.video_mask)
        feats.append(corpus.features(dialog))
        gold.append(np.asarray([0] + dialog.turns[turn].a + [1], dtype=np.int64))
        gts.append(cur_gt)
        turns.append(inp.turns)
        if run.contrastive.enabled and run.contrastive.text_mode == "on":
            pair = sample_turn_contrast(hist, cur if run.turn_selection else None, cfg.k, "on")
            if pair is not None:
                by = {t.index: t for t in hist}
                tpos.append(build_text(dialog.turns[turn].q, [(by[i].question, by[i].answer) for i in pair.positive], cfg))
                tneg.append(build_text(dialog.turns[turn].q, [(by[i].question, by[i].answer) for i in pair.negative], cfg))
                trows.append(j)
    batch = GenerationBatch(pad_batch(toks, PAD), pad_batch(segs, 2), np.stack(feats), np.stack(vmask),
                            pad_batch(gold, PAD), gts, turns)
    if trows:
        batch.text_pos = (pad_batch([t[0] for t in tpos], PAD), pad_batch([t[1] for t in tpos], 2))
        batch.text_neg = (pad_batch([t[0] for t in tneg], PAD), pad_batch([t[1] for t in tneg], 2))
        batch.text_contrast_rows = np.asarray(trows)
    return batch


def encode_use(params: Params, cfg: ModelConfig, tokens, segments, features, video_mask) -> tuple[CrossModal, Tensor, np.ndarray]:
    T, keep = encode_text(tokens, params, cfg, segments)
    if cfg.video_slicing:
        features, video_mask = slice_video(features, video_mask)
    V = encode_video(features, params, cfg, frame_mask=video_mask)
    key = np.concatenate([keep, np.asarray(video_mask, dtype=bool)], axis=-1)
    return cross_encode(concat_features(T, V), key, params, cfg, T.shape[-2]), T, keep


@dataclass
class GenerationLosses:
    generate: Tensor
    total: Tensor
    contrast: ContrastiveTerms | None = None
    text_contrast: ContrastiveTerms | None = None


def generation_losses(params: Params, run: RunConfig, batch: GenerationBatch, rng: np.random.Generator) -> GenerationLosses:
    cfg = run.model
    M, T, keep = encode_use(params, cfg, batch.tokens, batch.segments, batch.features, batch.video_mask)
    _, l_gen = decode_train(M, batch.gold, params, cfg)
    if not run.contrastive.enabled:
        return GenerationLosses(l_gen, l_gen)
    m = batch.features.shape[1]
    clips = [sample_clips(gt, m, run.contrastive.margin_ratio, rng) for gt in batch.gt]
    pos = np.stack([interval_to_mask(c.positive, m) for c in clips])
    neg = np.stack([interval_to_mask(c.negative, m) for c in clips])
    terms = contrastive_loss(M, T, keep, batch.features, pos, neg, run.contrastive.beta, params, cfg)
    l_con = terms.total
    text_terms = None
    if batch.text_contrast_rows is not None:
        rows = batch.text_contrast_rows
        sub = CrossModal(M.M[rows], M.n_text, M.key_mask[rows])
        Mp, _, _ = encode_use(params, cfg, *batch.text_pos, batch.features[rows], batch.video_mask[rows])
        Mn, _, _ = encode_use(params, cfg, *batch.text_neg, batch.features[rows], batch.video_mask[rows])
        text_terms = contrastive_terms(sub, Mp, Mn, run.contrastive.beta)
        l_con = l_con + text_terms.total
    return GenerationLosses(l_gen, final_loss(l_gen, l_con, run.contrastive.delta), terms, text_terms)
