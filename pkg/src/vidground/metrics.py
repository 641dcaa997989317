"""Text-generation and grounding metrics.

Sentences are token lists (strings or ids). Corpus functions take a list of
hypotheses and, per hypothesis, a list of references.
"""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Hashable, Sequence

from .grounding import Interval
from .turnselect import interval_iou

Sentence = Sequence[Hashable]
BLEU_EPS = 1e-9
ROUGE_BETA = 1.2
IOU_THRESHOLDS = (0.3, 0.5, 0.7)


def ngrams(tokens: Sentence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------- BLEU

def bleu(hypotheses: Sequence[Sentence], references: Sequence[Sequence[Sentence]], n: int = 4) -> float:
    """Corpus BLEU-n: clipped counts pooled over the corpus, one brevity penalty."""
    if not hypotheses:
        raise ValueError("empty corpus")
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    clipped = [0] * n
    total = [0] * n
    hyp_len = ref_len = 0
    for hyp, refs in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for k in range(1, n + 1):
            h = ngrams(hyp, k)
            cap: Counter = Counter()
            for r in refs:
                cap |= ngrams(r, k)
            clipped[k - 1] += sum(min(c, cap[g]) for g, c in h.items())
            total[k - 1] += max(0, len(hyp) - k + 1)
    logs = []
    for c, t in zip(clipped, total):
        p = c / t if c > 0 else BLEU_EPS
        logs.append(math.log(p))
    if hyp_len == 0:
        return 0.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(sum(logs) / n)


def sentence_bleu(hypothesis: Sentence, references: Sequence[Sentence], n: int = 4) -> float:
    return bleu([hypothesis], [references], n)


# ---------------------------------------------------------------- ROUGE-L

def lcs_length(a: Sentence, b: Sentence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Sentence, references: Sentence | Sequence[Sentence], beta: float = ROUGE_BETA) -> float:
    """LCS F-measure; with several references uses the best precision and recall."""
    refs = _as_ref_list(references)
    if len(hypothesis) == 0:
        return 0.0
    precs, recs = [], []
    for r in refs:
        lcs = lcs_length(hypothesis, r)
        precs.append(lcs / len(hypothesis))
        recs.append(lcs / len(r) if r else 0.0)
    p, r = max(precs), max(recs)
    if p == 0.0 or r == 0.0:
        return 0.0
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def _as_ref_list(references) -> list[Sentence]:
    if references and not isinstance(references[0], (list, tuple)):
        return [references]
    return list(references)


# ---------------------------------------------------------------- CIDEr

def _tfidf(counts: Counter, df: Counter, log_n: float) -> dict:
    return {g: c * (log_n - math.log(max(1.0, df[g]))) for g, c in counts.items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_scores(hypotheses: Sequence[Sentence], references: Sequence[Sequence[Sentence]], n: int = 4) -> list[float]:
    """Per-item CIDEr: mean over n-gram orders of the mean TF-IDF cosine to each reference.

    Document frequencies come from the references; no length penalty, no x10.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    if not hypotheses:
        raise ValueError("empty corpus")
    N = len(references)
    if N < 2:
        warnings.warn("CIDEr over a single document: every IDF weight is 0", RuntimeWarning, stacklevel=2)
    log_n = math.log(float(N))
    dfs = []
    for k in range(1, n + 1):
        df: Counter = Counter()
        for refs in references:
            df.update(set().union(*(ngrams(r, k).keys() for r in refs)))
        dfs.append(df)
    scores = []
    for hyp, refs in zip(hypotheses, references):
        per_n = []
        for k in range(1, n + 1):
            hv = _tfidf(ngrams(hyp, k), dfs[k - 1], log_n)
            sims = [_cosine(hv, _tfidf(ngrams(r, k), dfs[k - 1], log_n)) for r in refs]
            per_n.append(sum(sims) / len(sims))
        scores.append(sum(per_n) / n)
    return scores


def cider(hypotheses: Sequence[Sentence], references: Sequence[Sequence[Sentence]], n: int = 4) -> float:
    s = cider_scores(hypotheses, references, n)
    return sum(s) / len(s)


# ---------------------------------------------------------------- METEOR-lite

def _align(hyp: Sentence, ref: Sentence) -> list[tuple[int, int]]:
    """Exact-match unigram alignment, preferring to extend the current chunk."""
    used = [False] * len(ref)
    pairs = []
    last = -2
    for i, w in enumerate(hyp):
        cands = [j for j, r in enumerate(ref) if r == w and not used[j]]
        if not cands:
            continue
        j = last + 1 if (last + 1) in cands else cands[0]
        used[j] = True
        pairs.append((i, j))
        last = j
    return pairs


def meteor_lite(hypothesis: Sentence, references: Sentence | Sequence[Sentence]) -> float:
    """Exact-match METEOR core: F_mean = 10PR/(R+9P), penalty 0.5*(chunks/matches)^3."""
    best = 0.0
    for ref in _as_ref_list(references):
        pairs = _align(hypothesis, ref)
        m = len(pairs)
        if m == 0:
            continue
        P, R = m / len(hypothesis), m / len(ref)
        fmean = 10 * P * R / (R + 9 * P)
        chunks = 1
        for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
            if not (i1 == i0 + 1 and j1 == j0 + 1):
                chunks += 1
        penalty = 0.5 * (chunks / m) ** 3
        best = max(best, fmean * (1 - penalty))
    return best


# ---------------------------------------------------------------- grounding recall

def recall_at_iou(predictions: Sequence[Interval], labels: Sequence[Interval], mu: float) -> float:
    """Fraction of predictions whose IoU with the label reaches ``mu`` (top-1)."""
    if len(predictions) != len(labels):
        raise ValueError("prediction/label count mismatch")
    if not predictions:
        raise ValueError("no predictions to score")
    hits = sum(interval_iou(p, g) >= mu for p, g in zip(predictions, labels))
    return hits / len(predictions)


# ---------------------------------------------------------------- report

TEXT_METRICS = ("cider", "bleu1", "bleu2", "bleu3", "bleu4", "meteor_lite", "rouge_l")


@dataclass
class MetricReport:
    bleu1: float = 0.0
    bleu2: float = 0.0
    bleu3: float = 0.0
    bleu4: float = 0.0
    meteor_lite: float = 0.0
    rouge_l: float = 0.0
    cider: float = 0.0
    avg: float = 0.0
    r_at_1: dict[float, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r_at_1"] = {str(k): v for k, v in self.r_at_1.items()}
        return d


def score_corpus(
    hypotheses: Sequence[Sentence],
    references: Sequence[Sequence[Sentence]],
    predictions: Sequence[Interval] | None = None,
    labels: Sequence[Interval] | None = None,
) -> MetricReport:
    refs = [_as_ref_list(r) for r in references]
    rep = MetricReport(
        bleu1=bleu(hypotheses, refs, 1),
        bleu2=bleu(hypotheses, refs, 2),
        bleu3=bleu(hypotheses, refs, 3),
        bleu4=bleu(hypotheses, refs, 4),
        meteor_lite=sum(meteor_lite(h, r) for h, r in zip(hypotheses, refs)) / len(hypotheses),
        rouge_l=sum(rouge_l(h, r) for h, r in zip(hypotheses, refs)) / len(hypotheses),
        cider=cider(hypotheses, refs),
    )
    rep.avg = sum(getattr(rep, k) for k in TEXT_METRICS) / len(TEXT_METRICS)
    if predictions is not None and labels is not None:
        rep.r_at_1 = {mu: recall_at_iou(predictions, labels, mu) for mu in IOU_THRESHOLDS}
    return rep
