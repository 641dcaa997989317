import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vidground.grounding import Interval
from vidground.metrics import (
    TEXT_METRICS, bleu, cider, lcs_length, meteor_lite, recall_at_iou, rouge_l, score_corpus, sentence_bleu,
)

from _oracles import brute_lcs, cider_brute

words = st.lists(st.sampled_from(list("abcdef")), min_size=1, max_size=8)


def test_bleu1_brevity_example():
    v = sentence_bleu("the cat sat".split(), ["the cat sat down".split()], n=1)
    assert v == pytest.approx(math.exp(1 - 4 / 3), abs=1e-4)
    assert v == pytest.approx(0.7165, abs=1e-4)


def test_bleu_identity_and_smoothing():
    s = "a b c d e".split()
    assert sentence_bleu(s, [s]) == pytest.approx(1.0)
    low = sentence_bleu("a b c x".split(), ["a b c d".split()])
    assert 0 < low < 1e-2


def test_bleu_empty_corpus():
    with pytest.raises(ValueError):
        bleu([], [])


def test_bleu_is_corpus_level():
    hyps = [["a", "b"], ["c", "d", "e", "f"]]
    refs = [[["a", "b"]], [["c", "x", "e", "f"]]]
    # pooled unigram precision 5/6, one brevity penalty (lengths match)
    assert bleu(hyps, refs, 1) == pytest.approx(5 / 6)


def test_rouge_examples():
    assert rouge_l("a b c".split(), "a c".split()) == pytest.approx(0.8299, abs=1e-4)
    assert rouge_l("a b".split(), "a b".split()) == pytest.approx(1.0)
    assert rouge_l("a b".split(), "c d".split()) == 0.0
    assert rouge_l([], ["a"]) == 0.0


@given(words, words)
def test_lcs_matches_brute_force(a, b):
    assert lcs_length(a, b) == brute_lcs(a, b)


def test_cider_identity_and_disjoint():
    refs = [[["a", "b", "c", "g"]], [["d", "e", "f", "h"]]]
    assert cider([["a", "b", "c", "g"], ["d", "e", "f", "h"]], refs) == pytest.approx(1.0)
    assert cider([["x", "y"], ["z"]], refs) == 0.0


def test_cider_toy_corpus_against_brute_force():
    refs = [[["the", "dog", "runs"]], [["a", "cat", "sleeps"]], [["the", "bird", "sings"]]]
    hyps = [["the", "dog", "sleeps"], ["a", "cat", "runs"], ["one", "bird", "sings"]]
    assert cider(hyps, refs) == pytest.approx(cider_brute(hyps, refs), abs=1e-12)


@given(st.lists(st.tuples(words, words), min_size=2, max_size=4))
def test_cider_matches_brute_force(pairs):
    hyps = [h for h, _ in pairs]
    refs = [[r] for _, r in pairs]
    assert cider(hyps, refs) == pytest.approx(cider_brute(hyps, refs), abs=1e-9)


def test_cider_single_document_warns():
    with pytest.warns(RuntimeWarning):
        cider([["a"]], [[["a"]]])


def test_meteor_examples():
    s = "a b c d".split()
    assert meteor_lite(s, s) == pytest.approx(1 - 0.5 / 64, abs=1e-4)
    assert meteor_lite(s, s) == pytest.approx(0.9922, abs=1e-4)
    assert meteor_lite(["a", "b"], ["c"]) == 0.0
    assert meteor_lite(["a", "b"], ["b", "a"]) == pytest.approx(0.5)


def test_recall_at_iou():
    labels = [Interval(0, 10), Interval(0, 10)]
    preds = [Interval(0, 6), Interval(0, 4)]  # IoUs 0.6, 0.4
    assert recall_at_iou(preds, labels, 0.5) == 0.5
    assert recall_at_iou(labels, labels, 0.7) == 1.0
    assert recall_at_iou([Interval(20, 30)], [Interval(0, 1)], 0.0) == 1.0
    with pytest.raises(ValueError):
        recall_at_iou(preds, labels[:1], 0.5)


@given(st.lists(st.tuples(st.integers(0, 20), st.integers(1, 10), st.integers(0, 20), st.integers(1, 10)),
                min_size=1, max_size=20))
def test_recall_counts_and_monotone(rows):
    preds = [Interval(a, a + la) for a, la, _, _ in rows]
    labels = [Interval(b, b + lb) for _, _, b, lb in rows]
    from vidground.turnselect import interval_iou
    last = 1.0
    for mu in (0.0, 0.3, 0.5, 0.7, 1.0):
        r = recall_at_iou(preds, labels, mu)
        assert r == sum(interval_iou(p, g) >= mu for p, g in zip(preds, labels)) / len(preds)
        assert r <= last
        last = r


@given(st.lists(words, min_size=2, max_size=4), st.permutations(list("abcdef")))
def test_metrics_invariant_under_relabeling(sents, perm):
    mapping = dict(zip("abcdef", perm))
    hyps = sents
    refs = [[list(reversed(s))] for s in sents]
    relabel = lambda s: [mapping[w] for w in s]  # noqa: E731
    a = score_corpus(hyps, refs)
    b = score_corpus([relabel(h) for h in hyps], [[relabel(r[0])] for r in refs])
    for k in TEXT_METRICS:
        assert getattr(a, k) == pytest.approx(getattr(b, k), abs=1e-12)


def test_avg_is_mean_of_seven():
    hyps = ["a b c".split(), "d e".split()]
    refs = [["a b d".split()], ["d e f".split()]]
    rep = score_corpus(hyps, refs, [Interval(0, 2)] * 2, [Interval(0, 2), Interval(5, 6)])
    vals = [rep.cider, rep.bleu1, rep.bleu2, rep.bleu3, rep.bleu4, rep.meteor_lite, rep.rouge_l]
    assert rep.avg == pytest.approx(sum(vals) / 7, abs=1e-15)
    assert rep.r_at_1 == {0.3: 0.5, 0.5: 0.5, 0.7: 0.5}
    assert set(rep.to_dict()["r_at_1"]) == {"0.3", "0.5", "0.7"}


def test_identity_scores():
    s = "x y z w".split()
    rep = score_corpus([s, "p q r v".split()], [[s], ["p q r v".split()]])
    for k in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider"):
        assert getattr(rep, k) == pytest.approx(1.0, abs=1e-9)
