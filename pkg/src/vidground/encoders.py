"""Text, video and cross-modal transformer encoders.

Everything here is a pure function of ``(inputs, params, cfg)``; parameters
are a flat ``dict[str, Tensor]`` keyed by dotted names. Batched inputs carry
a leading batch axis; the public functions also accept a single unbatched
sequence and return unbatched outputs in that case.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .diffcore import Tensor, ops

Params = Mapping[str, Tensor]

BOS, EOS, SEP, PAD = 0, 1, 2, 3
SPECIALS = ("<bos>", "<eos>", "<sep>", "<pad>")

SEG_QUESTION, SEG_HISTORY, SEG_SPECIAL = 0, 1, 2


@dataclass
class ModelConfig:
    d: int = 64
    d_v: int = 64
    vocab_size: int = 256
    n_heads: int = 4
    ffn: int = 128
    text_layers: int = 2
    video_layers: int = 2
    cross_layers: int = 1
    decoder_layers: int = 1
    video_cap: int = 100
    question_cap: int = 20
    history_cap: int = 60
    decoder_cap: int = 20
    mask_width: int = 3
    boundary_width: int = 3
    alpha: float = 0.5
    k: int = 3
    grounding_history: int = 3  # history turns shown to the grounding stage
    video_slicing: bool = False  # left-align the visible clip instead of masking in place
    lam: float = 0.2
    beam_size: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.grounding_history < 0:
            raise ValueError("grounding_history must be >= 0")
        if self.d % self.n_heads:
            raise ValueError("hidden size must divide evenly across heads")
        for w in (self.mask_width, self.boundary_width):
            if w % 2 == 0:
                raise ValueError(f"conv width must be odd, got {w}")


# ---------------------------------------------------------------- vocabulary

@dataclass
class Vocab:
    """Lowercase whitespace vocabulary with reserved specials at ids 0-3."""

    tokens: list[str] = field(default_factory=lambda: list(SPECIALS))

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the four special tokens")
        self._index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def add(self, word: str) -> int:
        word = word.lower()
        if word not in self._index:
            self._index[word] = len(self.tokens)
            self.tokens.append(word)
        return self._index[word]

    def encode(self, text: str | Iterable[str]) -> list[int]:
        words = text.lower().split() if isinstance(text, str) else [w.lower() for w in text]
        try:
            return [self._index[w] for w in words]
        except KeyError as exc:
            raise KeyError(f"unknown token {exc.args[0]!r}") from None

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        words = [self.tokens[i] for i in ids]
        if strip:
            words = [w for w in words if w not in SPECIALS]
        return words


# ---------------------------------------------------------------- text layout

def build_text(
    question: Sequence[int],
    history: Sequence[tuple[Sequence[int], Sequence[int]]],
    cfg: ModelConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """``[BOS] question [SEP] q1 a1 q2 a2 ... [SEP]`` with segment tags.

    History turns are given oldest first; when over the cap the oldest
    tokens are dropped.
    """
    if len(question) == 0:
        raise ValueError("empty question")
    q = list(question)[: cfg.question_cap]
    hist: list[int] = []
    for qa in history:
        hist.extend(qa[0])
        hist.extend(qa[1])
    hist = hist[max(0, len(hist) - cfg.history_cap):]
    ids = [BOS] + q + [SEP] + hist + [SEP]
    segs = ([SEG_SPECIAL] + [SEG_QUESTION] * len(q) + [SEG_SPECIAL]
            + [SEG_HISTORY] * len(hist) + [SEG_SPECIAL])
    return np.asarray(ids, dtype=np.int64), np.asarray(segs, dtype=np.int64)


def pad_batch(seqs: Sequence[np.ndarray], fill: int) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


# ---------------------------------------------------------------- parameters

def _normal(rng: np.random.Generator, shape, std: float, name: str) -> Tensor:
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True, name=name)


def _zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def _ones(shape, name: str) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


def init_layer(rng, prefix: str, cfg: ModelConfig, n_layers: int, cross: bool = False) -> dict[str, Tensor]:
    d, f = cfg.d, cfg.ffn
    out_std = 1.0 / np.sqrt(d) / np.sqrt(2.0 * n_layers)
    p: dict[str, Tensor] = {}
    blocks = ["self", "cross"] if cross else ["self"]
    for blk in blocks:
        for nm in ("q", "k", "v"):
            p[f"{prefix}.{blk}.w{nm}"] = _normal(rng, (d, d), 1.0 / np.sqrt(d), f"{prefix}.{blk}.w{nm}")
            p[f"{prefix}.{blk}.b{nm}"] = _zeros(d, f"{prefix}.{blk}.b{nm}")
        p[f"{prefix}.{blk}.wo"] = _normal(rng, (d, d), out_std, f"{prefix}.{blk}.wo")
        p[f"{prefix}.{blk}.bo"] = _zeros(d, f"{prefix}.{blk}.bo")
        p[f"{prefix}.{blk}.ln.g"] = _ones(d, f"{prefix}.{blk}.ln.g")
        p[f"{prefix}.{blk}.ln.b"] = _zeros(d, f"{prefix}.{blk}.ln.b")
    p[f"{prefix}.ffn.w1"] = _normal(rng, (d, f), 1.0 / np.sqrt(d), f"{prefix}.ffn.w1")
    p[f"{prefix}.ffn.b1"] = _zeros(f, f"{prefix}.ffn.b1")
    p[f"{prefix}.ffn.w2"] = _normal(rng, (f, d), 1.0 / np.sqrt(f) / np.sqrt(2.0 * n_layers), f"{prefix}.ffn.w2")
    p[f"{prefix}.ffn.b2"] = _zeros(d, f"{prefix}.ffn.b2")
    p[f"{prefix}.ffn.ln.g"] = _ones(d, f"{prefix}.ffn.ln.g")
    p[f"{prefix}.ffn.ln.b"] = _zeros(d, f"{prefix}.ffn.ln.b")
    return p


def _ln_params(prefix: str, d: int) -> dict[str, Tensor]:
    return {f"{prefix}.g": _ones(d, f"{prefix}.g"), f"{prefix}.b": _zeros(d, f"{prefix}.b")}


def init_encoder_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.d
    p: dict[str, Tensor] = {
        "tok_emb": _normal(rng, (cfg.vocab_size, d), 1.0, "tok_emb"),
        "seg_emb": _normal(rng, (3, d), 1.0, "seg_emb"),
        "video.proj.w": _normal(rng, (cfg.d_v, d), 1.0 / np.sqrt(cfg.d_v), "video.proj.w"),
        "video.proj.b": _zeros(d, "video.proj.b"),
        "cross.type_emb": _normal(rng, (2, d), 0.1, "cross.type_emb"),
    }
    p.update(_ln_params("text.ln_in", d))
    p.update(_ln_params("text.ln_out", d))
    p.update(_ln_params("video.ln_in", d))
    p.update(_ln_params("video.ln_out", d))
    p.update(_ln_params("cross.ln_out", d))
    for i in range(cfg.text_layers):
        p.update(init_layer(rng, f"text.l{i}", cfg, cfg.text_layers))
    for i in range(cfg.video_layers):
        p.update(init_layer(rng, f"video.l{i}", cfg, cfg.video_layers))
    for i in range(cfg.cross_layers):
        p.update(init_layer(rng, f"cross.l{i}", cfg, cfg.cross_layers))
    return p


# ---------------------------------------------------------------- building blocks

def _ln(x: Tensor, p: Params, prefix: str) -> Tensor:
    return ops.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])


def attention(xq: Tensor, xkv: Tensor, p: Params, prefix: str, mask: np.ndarray, n_heads: int) -> Tensor:
    """Multi-head attention; ``mask`` broadcasts to (B, heads, Lq, Lk)."""
    B, Lq, d = xq.shape
    Lk = xkv.shape[1]
    dh = d // n_heads

    def heads(x: Tensor, L: int) -> Tensor:
        return ops.transpose(ops.reshape(x, (B, L, n_heads, dh)), (0, 2, 1, 3))

    q = heads(ops.linear(xq, p[f"{prefix}.wq"], p[f"{prefix}.bq"]), Lq)
    k = heads(ops.linear(xkv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]), Lk)
    v = heads(ops.linear(xkv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]), Lk)
    scores = ops.mul(ops.matmul(q, ops.swap_last(k)), 1.0 / np.sqrt(dh))
    w = ops.masked_softmax(scores, mask)
    o = ops.reshape(ops.transpose(ops.matmul(w, v), (0, 2, 1, 3)), (B, Lq, d))
    return ops.linear(o, p[f"{prefix}.wo"], p[f"{prefix}.bo"])


def transformer_layer(
    x: Tensor,
    p: Params,
    prefix: str,
    cfg: ModelConfig,
    self_mask: np.ndarray,
    memory: Tensor | None = None,
    memory_mask: np.ndarray | None = None,
) -> Tensor:
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""
    h = _ln(x, p, f"{prefix}.self.ln")
    x = x + attention(h, h, p, f"{prefix}.self", self_mask, cfg.n_heads)
    if memory is not None:
        h = _ln(x, p, f"{prefix}.cross.ln")
        x = x + attention(h, memory, p, f"{prefix}.cross", memory_mask, cfg.n_heads)
    h = _ln(x, p, f"{prefix}.ffn.ln")
    h = ops.gelu(ops.linear(h, p[f"{prefix}.ffn.w1"], p[f"{prefix}.ffn.b1"]))
    return x + ops.linear(h, p[f"{prefix}.ffn.w2"], p[f"{prefix}.ffn.b2"])


def key_mask_4d(key_mask: np.ndarray) -> np.ndarray:
    return np.asarray(key_mask, dtype=bool)[:, None, None, :]


# ---------------------------------------------------------------- encoders

def encode_text(
    tokens,
    params: Params,
    cfg: ModelConfig,
    segments=None,
) -> tuple[Tensor, np.ndarray]:
    """Embed token ids (n,) or (B, n) into T of shape (..., n, d).

    Returns the encoding and the key mask (False at PAD); PAD rows are zero.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    single = ids.ndim == 1
    if single:
        ids = ids[None]
    if ids.shape[-1] == 0:
        raise ValueError("empty token sequence")
    if ids.max() >= cfg.vocab_size:
        raise ValueError("token id beyond vocabulary size")
    if segments is None:
        segs = np.full(ids.shape, SEG_QUESTION, dtype=np.int64)
    else:
        segs = np.asarray(segments, dtype=np.int64).reshape(ids.shape)
    keep = ids != PAD
    if not keep.any(axis=1).all():
        raise ValueError("token sequence consists of padding only")
    x = ops.embedding(params["tok_emb"], ids) + ops.embedding(params["seg_emb"], segs)
    x = _ln(ops.add_positional(x), params, "text.ln_in")
    mask = key_mask_4d(keep)
    for i in range(cfg.text_layers):
        x = transformer_layer(x, params, f"text.l{i}", cfg, mask)
    x = ops.where_rows(_ln(x, params, "text.ln_out"), keep)
    if single:
        return x[0], keep[0]
    return x, keep


def encode_video(
    features,
    params: Params,
    cfg: ModelConfig,
    frame_mask=None,
) -> Tensor:
    """Encode frame features (m, d_v) or (B, m, d_v) into V (..., m, d).

    Frames with ``frame_mask`` False are invisible to every other frame and
    come out as zero rows.
    """
    f = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    single = f.ndim == 2
    if single:
        f = f[None]
    if f.shape[1] < 1:
        raise ValueError("video has no frames")
    if f.shape[-1] != cfg.d_v:
        raise ValueError(f"feature width {f.shape[-1]} != configured d_v {cfg.d_v}")
    keep = np.ones(f.shape[:2], dtype=bool) if frame_mask is None else np.asarray(frame_mask, dtype=bool).reshape(f.shape[:2])
    x = ops.linear(Tensor._wrap(f), params["video.proj.w"], params["video.proj.b"])
    x = _ln(ops.add_positional(x), params, "video.ln_in")
    mask = key_mask_4d(keep)
    for i in range(cfg.video_layers):
        x = transformer_layer(x, params, f"video.l{i}", cfg, mask)
    x = ops.where_rows(_ln(x, params, "video.ln_out"), keep)
    return x[0] if single else x


def slice_video(features: np.ndarray, frame_mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Move the visible frames to the front of the buffer, keeping their order.

    The result behaves like a physically cut clip of ``m'`` frames (positions
    restart at 0) while the array keeps its length ``m``; trailing rows are
    zero and masked.
    """
    f = np.asarray(features, dtype=np.float64)
    keep = np.asarray(frame_mask, dtype=bool)
    out_f, out_k = np.zeros_like(f), np.zeros_like(keep)
    for idx in np.ndindex(*keep.shape[:-1]):
        rows = np.flatnonzero(keep[idx])
        out_f[idx][:len(rows)] = f[idx][rows]
        out_k[idx][:len(rows)] = True
    return out_f, out_k


@dataclass
class CrossModal:
    """Cross-modal feature with its (text, video) row partition."""

    M: Tensor
    n_text: int
    key_mask: np.ndarray

    @property
    def n_video(self) -> int:
        return self.M.shape[-2] - self.n_text

    @property
    def video(self) -> Tensor:
        if self.n_video <= 0:
            raise ValueError("cross-modal feature has no video block")
        return self.M[..., self.n_text:, :]

    @property
    def text(self) -> Tensor:
        return self.M[..., : self.n_text, :]

    @property
    def video_mask(self) -> np.ndarray:
        return self.key_mask[..., self.n_text:]


def concat_features(T: Tensor, V: Tensor) -> Tensor:
    """Row-wise concatenation ``[T; V]`` along the sequence axis."""
    if T.shape[-1] != V.shape[-1]:
        raise ValueError(f"hidden size mismatch: {T.shape[-1]} vs {V.shape[-1]}")
    return ops.concat([T, V], axis=-2)


def cross_encode(C: Tensor, key_mask, params: Params, cfg: ModelConfig, n_text: int) -> CrossModal:
    """Cross-modal transformer over C = [T; V].

    Key-masked rows get zero attention weight everywhere and are zeroed in
    the output.
    """
    single = C.ndim == 2
    keep = np.asarray(key_mask, dtype=bool)
    if single:
        C = C.reshape((1,) + C.shape)
        keep = keep[None]
    if keep.shape != C.shape[:2]:
        raise ValueError(f"key mask shape {keep.shape} != sequence shape {C.shape[:2]}")
    if not keep.any(axis=1).all():
        raise ValueError("key mask has no visible position")
    types = np.zeros(C.shape[1], dtype=np.int64)
    types[n_text:] = 1
    x = C + ops.embedding(params["cross.type_emb"], types)
    mask = key_mask_4d(keep)
    for i in range(cfg.cross_layers):
        x = transformer_layer(x, params, f"cross.l{i}", cfg, mask)
    x = ops.where_rows(_ln(x, params, "cross.ln_out"), keep)
    if single:
        return CrossModal(x[0], n_text, keep[0])
    return CrossModal(x, n_text, keep)
