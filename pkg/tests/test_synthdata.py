import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vidground.synthdata import (
    Corpus, CorpusConfig, DatasetFormatError, classify_frames, generate_dialog, generate_dialogs,
    generate_splits, generate_video, load_split, read_dataset, render_video, save_splits, write_dataset,
)


@pytest.fixture(scope="module")
def corpus():
    return Corpus.build(CorpusConfig(n_dialogs=20, seed=3))


def test_generation_is_deterministic(corpus):
    a = generate_dialogs(corpus, 5)
    b = generate_dialogs(Corpus.build(CorpusConfig(n_dialogs=20, seed=3)), 5)
    assert a == b
    for x, y in zip(a, b):
        assert np.array_equal(corpus.features(x), corpus.features(y))
    assert generate_dialogs(Corpus.build(CorpusConfig(seed=4)), 5) != a


def test_offset_matches_prefix(corpus):
    assert generate_dialogs(corpus, 6)[3:] == generate_dialogs(corpus, 3, offset=3)


def test_zero_noise_frames_equal_segment_embedding(corpus):
    feats, segs = generate_video(corpus, 11, 32, 4, sigma=0.0)
    for s in segs:
        block = feats[s.start:s.end + 1]
        assert np.array_equal(block, np.broadcast_to(corpus.segment_embedding(s), block.shape))


@given(st.integers(0, 10**6), st.integers(1, 6))
@settings(max_examples=30)
def test_segments_tile_the_video(seed, n):
    c = Corpus.build(CorpusConfig(seed=0))
    _, segs = generate_video(c, seed, 32, n)
    assert segs[0].start == 0 and segs[-1].end == 31
    for a, b in zip(segs, segs[1:]):
        assert b.start == a.end + 1
    assert len({s.obj for s in segs}) == n


def test_nearest_concept_recovers_objects(corpus):
    for d in generate_dialogs(corpus, 10):
        labels = classify_frames(corpus, corpus.features(d))
        for s in d.segments:
            assert np.all(labels[s.start:s.end + 1] == s.obj)


def test_too_many_segments_rejected(corpus):
    with pytest.raises(ValueError):
        generate_video(corpus, 0, 4, 5)


def test_turns_point_at_their_segment(corpus):
    for d in generate_dialogs(corpus, 10):
        for t in d.turns:
            seg = next(s for s in d.segments if (s.start, s.end) == (t.ts, t.te))
            assert corpus.concepts[seg.obj].name in corpus.vocab.decode(t.q)
            assert corpus.actions[seg.action] in corpus.vocab.decode(t.a)
            assert corpus.places[seg.place] in corpus.vocab.decode(t.a)


def test_revisit_extremes(corpus):
    _, segs = generate_video(corpus, 5, 32, 6)
    always = generate_dialog(corpus, "x", segs, 32, 8, seed=1, gen_seed=5, revisit=1.0)
    assert len({(t.ts, t.te) for t in always.turns}) == 1
    never = generate_dialog(corpus, "x", segs, 32, 6, seed=1, gen_seed=5, revisit=0.0)
    assert len({(t.ts, t.te) for t in never.turns}) == 6
    # more turns than segments forces revisits even at probability 0
    forced = generate_dialog(corpus, "x", segs, 32, 8, seed=1, gen_seed=5, revisit=0.0)
    assert len({(t.ts, t.te) for t in forced.turns}) == 6


def test_revisit_question_omits_place(corpus):
    _, segs = generate_video(corpus, 5, 32, 4)
    d = generate_dialog(corpus, "x", segs, 32, 6, seed=2, gen_seed=5, revisit=1.0)
    first, later = corpus.vocab.decode(d.turns[0].q), corpus.vocab.decode(d.turns[1].q)
    assert "in" in first and "in" not in later


def test_config_validation():
    with pytest.raises(ValueError):
        CorpusConfig(max_turns=11)
    with pytest.raises(ValueError):
        CorpusConfig(revisit=1.5)
    with pytest.raises(ValueError):
        CorpusConfig(m=8, max_segments=6, min_segment_len=3)
    with pytest.raises(ValueError):
        Corpus.build(CorpusConfig(max_vocab=10))


def test_vocab_bound_and_codes(corpus):
    assert len(corpus.vocab) <= corpus.config.max_vocab
    for d in generate_dialogs(corpus, 5):
        for t in d.turns:
            assert all(0 <= i < len(corpus.vocab) for i in t.q + t.a)


@pytest.mark.parametrize("inline", [False, True])
def test_dataset_round_trip(tmp_path, inline):
    splits = generate_splits(CorpusConfig(n_dialogs=6, seed=9), n_val=2, n_test=2)
    for d in splits.train + splits.val + splits.test:
        splits.corpus.features(d)
    save_splits(splits, tmp_path, inline_features=inline)
    corpus, train = load_split(tmp_path / "train.jsonl")
    assert corpus.vocab.tokens == splits.corpus.vocab.tokens
    for x, y in zip(train, splits.train):
        assert (x.video_id, x.segments, x.turns) == (y.video_id, y.segments, y.turns)
        assert np.array_equal(corpus.features(x), splits.corpus.features(y))
    # bytes are stable across a second write
    write_dataset(train, tmp_path / "again.jsonl", inline_features=inline)
    assert (tmp_path / "again.jsonl").read_bytes() == (tmp_path / "train.jsonl").read_bytes()


def test_regenerated_features_match_render(corpus):
    d = generate_dialogs(corpus, 1)[0]
    assert np.array_equal(corpus.features(d), render_video(corpus, d.segments, d.m, d.gen_seed))


def test_truncated_file_reports_line(tmp_path, corpus):
    path = tmp_path / "bad.jsonl"
    write_dataset(generate_dialogs(corpus, 3), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:2] + [lines[2][: len(lines[2]) // 2]]) + "\n")
    with pytest.raises(DatasetFormatError, match=r"bad.jsonl:3"):
        read_dataset(path)
    path.write_text(json.dumps([1, 2]) + "\n")
    with pytest.raises(DatasetFormatError, match=r":1"):
        read_dataset(path)
