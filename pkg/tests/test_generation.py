import itertools
import math
import warnings

import numpy as np
import pytest

from vidground.diffcore import Adam, Tape, Tensor, backward
from vidground.encoders import BOS, EOS, ModelConfig, build_text, concat_features, cross_encode, encode_text, encode_video
from vidground.generation import (
    BeamHypothesis, assemble_inputs, beam_search, decode_train, decoder_logits, generate, greedy_decode,
    interval_to_mask, model_step_fn,
)
from vidground.grounding import Interval
from vidground.harness.model import init_params
from vidground.turnselect import TurnRecord, nearest_turns, select_turns

from _oracles import exhaustive_decode


def test_interval_to_mask_rounding():
    assert interval_to_mask(Interval(1.5, 3.0), 8).astype(int).tolist() == [0, 1, 1, 1, 0, 0, 0, 0]
    assert interval_to_mask(None, 4).all()


def test_full_interval_with_nearest_turns_equals_baseline():
    cfg = ModelConfig()
    hist = [TurnRecord(i, [4 + i], [10 + i], Interval(i, i + 1)) for i in range(1, 6)]
    base = assemble_inputs([20, 21], hist, nearest_turns(hist, 3), None, 8, cfg)
    full = assemble_inputs([20, 21], hist, nearest_turns(hist, 3), Interval(0, 7), 8, cfg)
    np.testing.assert_array_equal(base.tokens, full.tokens)
    np.testing.assert_array_equal(base.video_mask, full.video_mask)


def test_zero_selected_turns_question_only():
    inp = assemble_inputs([20], [], select_turns([], Interval(0, 1), 3), Interval(0, 1), 4, ModelConfig())
    assert inp.tokens.tolist() == [BOS, 20, 2, 2]
    with pytest.raises(ValueError):
        assemble_inputs([], [], select_turns([], Interval(0, 1), 3), None, 4, ModelConfig())


def test_selected_turns_are_chronological():
    cfg = ModelConfig()
    hist = [TurnRecord(1, [5], [6], Interval(0, 3)), TurnRecord(2, [7], [8], Interval(10, 12)),
            TurnRecord(3, [9], [10], Interval(0, 3))]
    sel = select_turns(hist, Interval(0, 3), 2)
    inp = assemble_inputs([20], hist, sel, Interval(0, 3), 16, cfg)
    assert inp.tokens.tolist() == [BOS, 20, 2, 5, 6, 9, 10, 2]


@pytest.fixture(scope="module")
def small():
    cfg = ModelConfig(d=16, d_v=8, vocab_size=12, n_heads=2, ffn=32)
    params = init_params(cfg, 3)
    rng = np.random.default_rng(5)
    ids, segs = build_text([4, 5, 6], [([7], [8, 9])], cfg)
    T, keep = encode_text(ids, params, cfg, segs)
    feats = rng.standard_normal((6, 8))
    vmask = np.array([0, 1, 1, 1, 0, 0], bool)

    def memory(f):
        V = encode_video(f, params, cfg, frame_mask=vmask)
        return cross_encode(concat_features(T, V), np.concatenate([keep, vmask]), params, cfg, len(ids))

    return cfg, params, feats, vmask, memory


def test_masked_frames_leave_logits_identical(small):
    cfg, params, feats, vmask, memory = small
    prefix = np.array([[BOS, 4, 5, 6]])
    a = decoder_logits(memory(feats), prefix, params, cfg).data
    poked = feats.copy()
    poked[~vmask] = np.random.default_rng(9).standard_normal(((~vmask).sum(), 8)) * 1e3
    b = decoder_logits(memory(poked), prefix, params, cfg).data
    assert np.array_equal(a, b)


def test_decoder_is_causal(small):
    cfg, params, feats, _, memory = small
    M = memory(feats)
    a = decoder_logits(M, np.array([[BOS, 4, 5, 6, 7]]), params, cfg).data
    b = decoder_logits(M, np.array([[BOS, 4, 5, 9, 9]]), params, cfg).data
    np.testing.assert_array_equal(a[:, :3], b[:, :3])


def test_untrained_loss_is_uniform_ce():
    cfg = ModelConfig(vocab_size=200)
    params = init_params(cfg, 0)
    M = cross_encode(Tensor(np.random.default_rng(0).standard_normal((6, 64))), np.ones(6, bool), params, cfg, 2)
    gold = np.array([BOS, 10, 11, 12, 13, EOS])
    _, loss = decode_train(M, gold, params, cfg)
    assert abs(loss.item() - math.log(200)) < 0.1


def test_single_token_vocab_has_zero_loss():
    cfg = ModelConfig(vocab_size=1)
    params = init_params(cfg, 0)
    M = cross_encode(Tensor(np.ones((3, 64))), np.ones(3, bool), params, cfg, 1)
    _, loss = decode_train(M, np.zeros(4, dtype=int), params, cfg)
    assert loss.item() == 0.0


def test_long_gold_truncates_with_warning(small):
    cfg, params, feats, _, memory = small
    gold = np.array([BOS] + [4] * 30 + [EOS])
    with pytest.warns(UserWarning, match="truncated"):
        logits, _ = decode_train(memory(feats), gold, params, cfg)
    assert logits.shape[1] == cfg.decoder_cap


def test_overfit_single_answer(small):
    cfg, params, feats, vmask, memory = small
    gold = np.array([BOS, 4, 7, 9, 5, EOS])
    names = [k for k in params if k.startswith("dec.")]
    opt = Adam({k: params[k] for k in names}, lr=3e-3)
    M = memory(feats)
    M = type(M)(Tensor(M.M.data), M.n_text, M.key_mask)
    loss = None
    for _ in range(200):
        opt.zero_grad()
        with Tape() as tape:
            _, loss = decode_train(M, gold, params, cfg)
        backward(loss, tape)
        opt.step()
    assert loss.item() < 0.1
    assert generate(M, params, cfg) == [4, 7, 9, 5]


# ---------------------------------------------------------------- search


def _table_step(table, vocab):
    """Step function from a dict prefix-tuple -> probability vector."""
    def step(prefixes):
        out = []
        for p in prefixes:
            probs = table.get(tuple(p[1:]), np.full(vocab, 1.0 / vocab))
            out.append(np.log(np.maximum(probs, 1e-300)))
        return np.array(out)
    return step


def test_beam_beats_greedy_hand_example():
    vocab = 72  # EOS=1, a=10, b=11, everything else filler
    def dist(eos, a=0.0, b=0.0):
        p = np.zeros(vocab)
        p[EOS], p[10], p[11] = eos, a, b
        filler = [i for i in range(vocab) if i not in (EOS, 10, 11)]
        p[filler] = (1 - p.sum()) / len(filler)
        return p
    table = {(): dist(0.0, 0.6, 0.4), (10,): dist(0.3), (11,): dist(0.9)}
    step = _table_step(table, vocab)
    assert greedy_decode(step, 2).tokens == [BOS, 10, EOS]
    best = beam_search(step, 2, 2)
    assert best.tokens == [BOS, 11, EOS]
    assert math.exp(best.logprob) == pytest.approx(0.36)


def _random_step(rng, vocab, depth):
    cache = {}

    def step(prefixes):
        rows = []
        for p in prefixes:
            key = tuple(p)
            if key not in cache:
                z = rng.standard_normal(vocab) * 2
                cache[key] = z - np.log(np.exp(z).sum())
            rows.append(cache[key])
        return np.array(rows)
    return step


@pytest.mark.parametrize("seed", range(10))
def test_beam_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    vocab, max_len = int(rng.integers(2, 5)), int(rng.integers(1, 5))
    step = _random_step(rng, vocab, max_len)
    ex = exhaustive_decode(step, vocab, max_len)
    bm = beam_search(step, vocab**max_len, max_len)
    assert bm.score == pytest.approx(ex[1], abs=1e-12)
    assert bm.tokens == ex[0]


@pytest.mark.parametrize("seed", range(10))
def test_beam_one_is_greedy(seed):
    rng = np.random.default_rng(100 + seed)
    step = _random_step(rng, 6, 8)
    assert beam_search(step, 1, 8).tokens == greedy_decode(step, 8).tokens


def test_beam_logprob_non_increasing():
    rng = np.random.default_rng(0)
    step = _random_step(rng, 5, 6)
    h = beam_search(step, 3, 6)
    lps = [0.0]
    for i in range(1, len(h.tokens)):
        lps.append(lps[-1] + float(step([h.tokens[:i]])[0][h.tokens[i]]))
    assert all(b <= a for a, b in zip(lps, lps[1:]))
    assert lps[-1] == pytest.approx(h.logprob)


def test_beam_size_validation():
    with pytest.raises(ValueError):
        beam_search(lambda p: np.zeros((len(p), 3)), 0, 3)


def test_model_beam_one_equals_greedy(small):
    cfg, params, feats, _, memory = small
    step = model_step_fn(memory(feats), params, cfg)
    assert beam_search(step, 1, 6).tokens == greedy_decode(step, 6).tokens
