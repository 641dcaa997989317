"""Answer generation: input assembly, causal decoder, teacher-forced loss and
beam search."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .diffcore import Tensor, no_grad, ops
from .encoders import (
    BOS, EOS, PAD, CrossModal, ModelConfig, Params, _ln, _ln_params, build_text,
    init_layer, key_mask_4d, transformer_layer,
)
from .grounding import Interval
from .turnselect import TurnRecord, TurnSelection

StepFn = Callable[[list[list[int]]], np.ndarray]


def interval_to_mask(interval: Interval | None, m: int) -> np.ndarray:
    """Binary frame mask covering ``floor(start)..ceil(end)``; all ones for None."""
    mask = np.zeros(m, dtype=bool)
    if interval is None:
        mask[:] = True
        return mask
    lo, hi = interval.frames(m)
    mask[lo:hi + 1] = True
    if not mask.any():
        raise ValueError(f"interval {interval} selects no frame of a {m}-frame video")
    return mask


@dataclass
class AssembledInput:
    tokens: np.ndarray
    segments: np.ndarray
    video_mask: np.ndarray
    turns: list[int]


def assemble_inputs(
    question: Sequence[int],
    history: Sequence[TurnRecord],
    selection: TurnSelection,
    interval: Interval | None,
    m: int,
    cfg: ModelConfig,
) -> AssembledInput:
    """Text from the question plus the selected turns; video gated by ``interval``."""
    if len(question) == 0:
        raise ValueError("empty question")
    by_index = {t.index: t for t in history}
    turns = sorted(selection.chosen)
    pairs = [(by_index[i].question, by_index[i].answer) for i in turns]
    ids, segs = build_text(question, pairs, cfg)
    return AssembledInput(ids, segs, interval_to_mask(interval, m), turns)


# ---------------------------------------------------------------- decoder

def init_decoder_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    p.update(_ln_params("dec.ln_in", cfg.d))
    p.update(_ln_params("dec.ln_out", cfg.d))
    for i in range(cfg.decoder_layers):
        p.update(init_layer(rng, f"dec.l{i}", cfg, cfg.decoder_layers, cross=True))
    p["dec.out.w"] = Tensor(rng.standard_normal((cfg.d, cfg.vocab_size)) * 0.02, True, "dec.out.w")
    p["dec.out.b"] = Tensor(np.zeros(cfg.vocab_size), True, "dec.out.b")
    return p


def decoder_logits(M: CrossModal, prefix: np.ndarray, params: Params, cfg: ModelConfig) -> Tensor:
    """Logits (B, t, vocab) for every prefix position; causal over the prefix."""
    ids = np.asarray(prefix, dtype=np.int64)
    B, t = ids.shape
    mem = M.M
    mem_keep = M.key_mask
    if mem.ndim == 2:
        mem = mem.reshape((1,) + mem.shape)
        mem_keep = mem_keep[None]
    if mem.shape[0] != B:
        if mem.shape[0] != 1:
            raise ValueError("memory batch does not match prefix batch")
        mem = ops.concat([mem] * B, axis=0)
        mem_keep = np.repeat(mem_keep, B, axis=0)
    keep = ids != PAD
    keep[:, 0] = True
    causal = np.tril(np.ones((t, t), dtype=bool))
    self_mask = causal[None, None] & keep[:, None, None, :]
    x = ops.embedding(params["tok_emb"], ids)
    x = _ln(ops.add_positional(x), params, "dec.ln_in")
    mem_mask = key_mask_4d(mem_keep)
    for i in range(cfg.decoder_layers):
        x = transformer_layer(x, params, f"dec.l{i}", cfg, self_mask, memory=mem, memory_mask=mem_mask)
    x = _ln(x, params, "dec.ln_out")
    return ops.linear(x, params["dec.out.w"], params["dec.out.b"])


def decode_train(M: CrossModal, gold, params: Params, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Teacher-forced logits and mean token cross-entropy (PAD targets skipped).

    ``gold`` is (l,) or (B, l) starting with BOS; sequences longer than the
    decoder cap are truncated with a warning.
    """
    ids = np.asarray(gold, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if ids.shape[1] < 2:
        raise ValueError("gold sequence needs at least two tokens")
    if ids.shape[1] > cfg.decoder_cap + 1:
        warnings.warn(f"gold answer of {ids.shape[1] - 1} tokens truncated to {cfg.decoder_cap}", stacklevel=2)
        ids = ids[:, : cfg.decoder_cap + 1]
    logits = decoder_logits(M, ids[:, :-1], params, cfg)
    loss = ops.softmax_cross_entropy(logits, ids[:, 1:], ignore_index=PAD)
    return logits, loss


# ---------------------------------------------------------------- search

@dataclass
class BeamHypothesis:
    tokens: list[int]
    logprob: float
    finished: bool = False

    @property
    def score(self) -> float:
        """Log-probability per generated token (BOS excluded)."""
        return self.logprob / max(1, len(self.tokens) - 1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def greedy_decode(step: StepFn, max_len: int, bos: int = BOS, eos: int = EOS) -> BeamHypothesis:
    seq, lp = [bos], 0.0
    for _ in range(max_len):
        dist = step([seq])[0]
        tok = int(np.argmax(dist))
        seq = seq + [tok]
        lp += float(dist[tok])
        if tok == eos:
            break
    return BeamHypothesis(seq, lp, True)


def beam_search(step: StepFn, beam_size: int, max_len: int, bos: int = BOS, eos: int = EOS) -> BeamHypothesis:
    """Breadth-limited search returning the best length-normalised finished hypothesis.

    ``step`` maps a list of prefixes to a (n, vocab) array of next-token
    log-probabilities. Hypotheses that emit EOS (or reach ``max_len``
    generated tokens) leave the beam, which then shrinks; with
    ``beam_size=1`` this is exactly greedy decoding.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    alive = [BeamHypothesis([bos], 0.0)]
    finished: list[BeamHypothesis] = []
    for t in range(max_len):
        logp = np.asarray(step([h.tokens for h in alive]), dtype=np.float64)
        total = np.array([h.logprob for h in alive])[:, None] + logp
        flat = total.reshape(-1)
        order = np.argsort(-flat, kind="stable")[:beam_size]
        vocab = logp.shape[1]
        nxt = []
        for idx in order:
            i, tok = divmod(int(idx), vocab)
            hyp = BeamHypothesis(alive[i].tokens + [tok], float(flat[idx]))
            if tok == eos or t == max_len - 1:
                hyp.finished = True
                finished.append(hyp)
            else:
                nxt.append(hyp)
        alive = nxt
        if not alive:
            break
    best = finished[0]
    for h in finished[1:]:
        if h.score > best.score:
            best = h
    return best


def model_step_fn(M: CrossModal, params: Params, cfg: ModelConfig) -> StepFn:
    """Next-token log-probabilities from the decoder for a single memory."""

    def step(prefixes: list[list[int]]) -> np.ndarray:
        ids = np.asarray(prefixes, dtype=np.int64)
        with no_grad():
            logits = decoder_logits(M, ids, params, cfg)
        return _log_softmax(logits.data[:, -1, :])

    return step


def generate(M: CrossModal, params: Params, cfg: ModelConfig, beam_size: int | None = None,
             max_len: int | None = None) -> list[int]:
    """Beam-search an answer; returns generated ids without BOS/EOS."""
    hyp = beam_search(model_step_fn(M, params, cfg), beam_size or cfg.beam_size, max_len or cfg.decoder_cap)
    return [t for t in hyp.tokens[1:] if t != EOS]
