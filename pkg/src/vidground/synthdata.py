"""Synthetic video-dialog corpus with ground-truth timestamps.

A video is a sequence of contiguous segments; each segment shows one object
undergoing one action, rendered as the sum of the object and action
embeddings plus Gaussian noise. Each dialog turn asks about one segment's
object. Answers name the action (visible only in the video) and a place
(mentioned only in the dialog text, in the first turn about that segment),
so a good answer to a revisiting question needs both the right video frames
and the right history turn.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoders import Vocab
from .grounding import GroundingLabel, Interval

OBJECTS = (
    "cup", "phone", "door", "laptop", "book", "towel", "chair", "bag", "box", "pillow",
    "blanket", "broom", "shoe", "window", "bottle", "plate", "sandwich", "camera", "mirror", "table",
    "jacket", "lamp", "paper", "dish", "cabinet", "bed", "sofa", "picture", "glass", "vacuum",
    "shelf", "television", "doorknob", "light", "medicine", "groceries", "clothes", "homework", "notebook", "food",
)
ACTIONS = ("holding", "opening", "washing", "moving", "cleaning", "carrying", "dropping", "touching",
           "throwing", "fixing", "closing", "tidying")
PLACES = ("kitchen", "bedroom", "hallway", "garage", "office", "bathroom", "garden", "basement",
          "pantry", "attic", "porch", "laundry")
SUBJECTS = (("the", "person"), ("someone",), ("the", "man"), ("the", "woman"))
FILLER = ("what", "happens", "to", "the", "in", "about", "is", "and", "now", "with", "a")


@dataclass
class CorpusConfig:
    n_dialogs: int = 2000
    m: int = 32
    d_v: int = 64
    sigma: float = 0.1
    n_objects: int = 20
    n_actions: int = 8
    n_places: int = 8
    min_segments: int = 4
    max_segments: int = 6
    min_segment_len: int = 3
    min_turns: int = 6
    max_turns: int = 10
    revisit: float = 0.3
    paraphrase: float = 0.0
    min_angle_deg: float = 60.0
    max_vocab: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.max_turns > 10:
            raise ValueError("dialogs hold at most 10 turns")
        if not 0.0 <= self.revisit <= 1.0:
            raise ValueError("revisit probability must lie in [0, 1]")
        if self.max_segments * self.min_segment_len > self.m:
            raise ValueError("segments do not fit in the video")


@dataclass
class ConceptSpec:
    """One object concept: its word, feature direction and answer phrasing."""

    id: int
    name: str
    embedding: np.ndarray
    subject: tuple[str, ...]

    def question(self, place: str | None) -> list[str]:
        if place is None:
            return ["what", "about", "the", self.name]
        return ["what", "happens", "to", "the", self.name, "in", "the", place]

    def answer(self, action: str, place: str, subject: Sequence[str] | None = None) -> list[str]:
        subj = list(subject or self.subject)
        return subj + ["is", action, "the", self.name, "in", "the", place]


@dataclass
class Segment:
    start: int
    end: int  # inclusive frame index
    obj: int
    action: int
    place: int


@dataclass
class Turn:
    q: list[int]
    a: list[int]
    ts: int
    te: int

    @property
    def interval(self) -> Interval:
        return Interval(float(self.ts), float(self.te))

    def label(self, m: int) -> GroundingLabel:
        return GroundingLabel.from_bounds(self.ts, self.te, m)


@dataclass
class SyntheticDialog:
    video_id: str
    m: int
    gen_seed: int
    segments: list[Segment]
    turns: list[Turn]
    features: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SyntheticDialog):
            return NotImplemented
        same = (self.video_id, self.m, self.gen_seed, self.segments, self.turns) == (
            other.video_id, other.m, other.gen_seed, other.segments, other.turns)
        if not same:
            return False
        if (self.features is None) != (other.features is None):
            return False
        return self.features is None or np.array_equal(self.features, other.features)


# ---------------------------------------------------------------- corpus-level tables

def _spread_directions(n: int, d: int, rng: np.random.Generator, min_angle_deg: float) -> np.ndarray:
    """Unit vectors with pairwise angle >= min_angle (orthonormal when n <= d)."""
    if n <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, n)))
        return q.T.copy()
    cos_max = math.cos(math.radians(min_angle_deg))
    vecs = np.zeros((n, d))
    for i in range(n):
        for _ in range(1000):
            v = rng.standard_normal(d)
            v /= np.linalg.norm(v)
            if i == 0 or np.max(np.abs(vecs[:i] @ v)) < cos_max:
                break
        else:
            raise RuntimeError(f"cannot place {n} directions {min_angle_deg} degrees apart in {d} dims")
        vecs[i] = v
    return vecs


@dataclass
class Corpus:
    """Vocabulary and feature tables shared by every dialog of a corpus."""

    config: CorpusConfig
    vocab: Vocab
    concepts: list[ConceptSpec]
    action_emb: np.ndarray
    actions: tuple[str, ...]
    places: tuple[str, ...]

    @classmethod
    def build(cls, cfg: CorpusConfig) -> "Corpus":
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
        names = [OBJECTS[i] if i < len(OBJECTS) else f"object{i}" for i in range(cfg.n_objects)]
        actions = tuple(ACTIONS[i] if i < len(ACTIONS) else f"action{i}" for i in range(cfg.n_actions))
        places = tuple(PLACES[i] if i < len(PLACES) else f"place{i}" for i in range(cfg.n_places))
        dirs = _spread_directions(cfg.n_objects + cfg.n_actions, cfg.d_v, rng, cfg.min_angle_deg)
        scale = math.sqrt(cfg.d_v)
        concepts = [
            ConceptSpec(i, names[i], dirs[i] * scale, SUBJECTS[int(rng.integers(len(SUBJECTS)))])
            for i in range(cfg.n_objects)
        ]
        vocab = Vocab()
        for w in FILLER:
            vocab.add(w)
        for subj in SUBJECTS:
            for w in subj:
                vocab.add(w)
        for w in (*names, *actions, *places):
            vocab.add(w)
        if len(vocab) > cfg.max_vocab:
            raise ValueError(f"vocabulary of {len(vocab)} exceeds cap {cfg.max_vocab}")
        return cls(cfg, vocab, concepts, dirs[cfg.n_objects:] * scale, actions, places)

    def segment_embedding(self, seg: Segment) -> np.ndarray:
        return self.concepts[seg.obj].embedding + self.action_emb[seg.action]

    def features(self, dialog: SyntheticDialog) -> np.ndarray:
        """Frame features, regenerated from ``gen_seed`` unless stored inline."""
        if dialog.features is None:
            dialog.features = render_video(self, dialog.segments, dialog.m, dialog.gen_seed)
        return dialog.features


def dialog_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


# ---------------------------------------------------------------- video

def sample_segments(rng: np.random.Generator, m: int, num_segments: int, cfg: CorpusConfig) -> list[tuple[int, int]]:
    base = cfg.min_segment_len if num_segments * cfg.min_segment_len <= m else 1
    spare = m - base * num_segments
    extra = rng.multinomial(spare, rng.dirichlet(np.ones(num_segments)))
    bounds, start = [], 0
    for k in range(num_segments):
        length = base + int(extra[k])
        bounds.append((start, start + length - 1))
        start += length
    return bounds


def render_video(corpus: Corpus, segments: Sequence[Segment], m: int, gen_seed: int,
                 sigma: float | None = None) -> np.ndarray:
    sigma = corpus.config.sigma if sigma is None else sigma
    rng = np.random.default_rng(gen_seed)
    feats = np.empty((m, corpus.config.d_v))
    for seg in segments:
        feats[seg.start:seg.end + 1] = corpus.segment_embedding(seg)
    noise = rng.standard_normal(feats.shape)
    return feats + sigma * noise


def generate_video(corpus: Corpus, seed: int, m: int, num_segments: int, d_v: int | None = None,
                   sigma: float | None = None) -> tuple[np.ndarray, list[Segment]]:
    """Segment table and frame features for one video, deterministic in ``seed``."""
    if num_segments > m:
        raise ValueError(f"{num_segments} segments do not fit in {m} frames")
    if d_v is not None and d_v != corpus.config.d_v:
        raise ValueError("feature width is fixed by the corpus")
    cfg = corpus.config
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    bounds = sample_segments(rng, m, num_segments, cfg)
    objs = rng.choice(cfg.n_objects, size=num_segments, replace=False)
    segs = [
        Segment(s, e, int(o), int(rng.integers(cfg.n_actions)), int(rng.integers(cfg.n_places)))
        for (s, e), o in zip(bounds, objs)
    ]
    return render_video(corpus, segs, m, seed, sigma), segs


def classify_frames(corpus: Corpus, features: np.ndarray) -> np.ndarray:
    """Object id per frame by largest projection onto the object directions."""
    emb = np.stack([c.embedding for c in corpus.concepts])
    return np.argmax(features @ emb.T, axis=1)


# ---------------------------------------------------------------- dialog

def generate_dialog(
    corpus: Corpus,
    video_id: str,
    segments: Sequence[Segment],
    m: int,
    num_turns: int,
    seed: int,
    gen_seed: int,
    revisit: float | None = None,
) -> SyntheticDialog:
    """Turns that each ask about one segment.

    After the first turn, a turn revisits an already-discussed segment with
    probability ``revisit`` and otherwise moves to a fresh one (or revisits
    when none is left).
    """
    if num_turns > 10:
        raise ValueError("dialogs hold at most 10 turns")
    cfg = corpus.config
    p = cfg.revisit if revisit is None else revisit
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    visited: list[int] = []
    turns = []
    for _ in range(num_turns):
        fresh = [i for i in range(len(segments)) if i not in visited]
        if visited and (not fresh or rng.random() < p):
            s = visited[int(rng.integers(len(visited)))]
            first = False
        else:
            s = fresh[int(rng.integers(len(fresh)))]
            visited.append(s)
            first = True
        seg = segments[s]
        concept = corpus.concepts[seg.obj]
        place = corpus.places[seg.place]
        subject = None
        if cfg.paraphrase > 0 and rng.random() < cfg.paraphrase:
            subject = SUBJECTS[int(rng.integers(len(SUBJECTS)))]
        q = concept.question(place if first else None)
        a = concept.answer(corpus.actions[seg.action], place, subject)
        turns.append(Turn(corpus.vocab.encode(q), corpus.vocab.encode(a), seg.start, seg.end))
    return SyntheticDialog(video_id, m, gen_seed, list(segments), turns)


def generate_dialogs(corpus: Corpus, n: int, offset: int = 0, revisit: float | None = None) -> list[SyntheticDialog]:
    """``n`` dialogs with per-dialog seeds derived from (corpus seed, index)."""
    cfg = corpus.config
    out = []
    for idx in range(offset, offset + n):
        seed = dialog_seed(cfg.seed, idx)
        rng = np.random.default_rng(seed)
        n_seg = int(rng.integers(cfg.min_segments, cfg.max_segments + 1))
        n_turns = int(rng.integers(cfg.min_turns, cfg.max_turns + 1))
        _, segs = generate_video(corpus, seed, cfg.m, n_seg)
        out.append(generate_dialog(corpus, f"v{idx:06d}", segs, cfg.m, n_turns, seed, seed, revisit))
    return out


@dataclass
class Splits:
    corpus: Corpus
    train: list[SyntheticDialog]
    val: list[SyntheticDialog]
    test: list[SyntheticDialog]


def generate_splits(cfg: CorpusConfig, n_val: int = 200, n_test: int = 200) -> Splits:
    corpus = Corpus.build(cfg)
    train = generate_dialogs(corpus, cfg.n_dialogs, 0)
    val = generate_dialogs(corpus, n_val, cfg.n_dialogs)
    test = generate_dialogs(corpus, n_test, cfg.n_dialogs + n_val)
    return Splits(corpus, train, val, test)


# ---------------------------------------------------------------- persistence

class DatasetFormatError(ValueError):
    pass


def dialog_to_record(d: SyntheticDialog, inline_features: bool = False) -> dict:
    rec = {
        "video_id": d.video_id,
        "m": d.m,
        "gen_seed": d.gen_seed,
        "segments": [[s.start, s.end, s.obj, s.action, s.place] for s in d.segments],
        "turns": [{"q": t.q, "a": t.a, "ts": t.ts, "te": t.te} for t in d.turns],
    }
    if inline_features:
        if d.features is None:
            raise ValueError("inline features requested but dialog has none")
        rec["features"] = d.features.tolist()
    return rec


def record_to_dialog(rec: dict) -> SyntheticDialog:
    feats = rec.get("features")
    return SyntheticDialog(
        video_id=str(rec["video_id"]),
        m=int(rec["m"]),
        gen_seed=int(rec["gen_seed"]) if rec.get("gen_seed") is not None else -1,
        segments=[Segment(*map(int, s)) for s in rec.get("segments", [])],
        turns=[Turn(list(map(int, t["q"])), list(map(int, t["a"])), int(t["ts"]), int(t["te"]))
               for t in rec["turns"]],
        features=None if feats is None else np.asarray(feats, dtype=np.float64),
    )


def vocab_path_for(path: Path) -> Path:
    return Path(path).parent / "vocab.json"


def write_vocab(corpus: Corpus, path: Path) -> None:
    payload = {"tokens": corpus.vocab.tokens, "corpus": asdict(corpus.config)}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def read_corpus(path: Path) -> Corpus:
    payload = json.loads(Path(path).read_text())
    corpus = Corpus.build(CorpusConfig(**payload["corpus"]))
    if corpus.vocab.tokens != payload["tokens"]:
        raise DatasetFormatError(f"{path}: vocabulary does not match its corpus settings")
    return corpus


def write_dataset(dialogs: Iterable[SyntheticDialog], path, inline_features: bool = False) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w") as fh:
        for d in dialogs:
            fh.write(json.dumps(dialog_to_record(d, inline_features), separators=(",", ":")) + "\n")
    tmp.replace(path)


def read_dataset(path) -> list[SyntheticDialog]:
    path = Path(path)
    out = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise TypeError("record is not an object")
                out.append(record_to_dialog(rec))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetFormatError(f"{path}:{lineno}: malformed record ({exc})") from None
    return out


def save_splits(splits: Splits, outdir, inline_features: bool = False) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_vocab(splits.corpus, outdir / "vocab.json")
    for name in ("train", "val", "test"):
        write_dataset(getattr(splits, name), outdir / f"{name}.jsonl", inline_features)


def load_split(path) -> tuple[Corpus, list[SyntheticDialog]]:
    path = Path(path)
    return read_corpus(vocab_path_for(path)), read_dataset(path)
