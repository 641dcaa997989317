"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import itertools
import math
from collections import Counter
from fractions import Fraction


# ---------------------------------------------------------------- turn selection

def iou_exact(a, b) -> Fraction:
    """IoU on rational endpoints by explicit set measure."""
    a0, a1, b0, b1 = (Fraction(x).limit_denominator(10**6) for x in (a.start, a.end, b.start, b.end))
    if a1 - a0 == 0 and b1 - b0 == 0:
        return Fraction(1) if (a0, a1) == (b0, b1) else Fraction(0)
    if a1 - a0 == 0 or b1 - b0 == 0:
        return Fraction(0)
    inter = max(Fraction(0), min(a1, b1) - max(a0, b0))
    return inter / ((a1 - a0) + (b1 - b0) - inter)


def select_oracle(history, current, k):
    """Phase 1: repeatedly take the best overlapping turn (IoU, then recency).
    Phase 2: supplement with the nearest remaining turns."""
    remaining = list(history)
    picked = []
    while len(picked) < k:
        best = None
        for t in remaining:
            s = iou_exact(t.interval, current)
            if s <= 0:
                continue
            if best is None or s > best[0] or (s == best[0] and t.index > best[1].index):
                best = (s, t)
        if best is None:
            break
        picked.append(best[1].index)
        remaining.remove(best[1])
    for t in sorted(remaining, key=lambda t: t.index, reverse=True):
        if len(picked) >= k:
            break
        picked.append(t.index)
    return sorted(picked)


# ---------------------------------------------------------------- text metrics

def brute_lcs(a, b) -> int:
    """Longest common subsequence by enumerating subsequences of the shorter side."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for r in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), r):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(any(x == y for y in it) for x in sub):
                return r
    return 0


def cider_brute(hyps, refs, n=4) -> float:
    """Direct TF-IDF cosine, written out from the definition."""
    N = len(refs)

    def grams(s, k):
        return Counter(tuple(s[i:i + k]) for i in range(len(s) - k + 1))

    total = 0.0
    for h, rs in zip(hyps, refs):
        per_n = []
        for k in range(1, n + 1):
            def df(g):
                return sum(1 for doc in refs if any(g in grams(r, k) for r in doc))

            def vec(s):
                c = grams(s, k)
                return {g: c[g] * math.log(N / max(1, df(g))) for g in c}

            hv = vec(h)
            sims = []
            for r in rs:
                rv = vec(r)
                keys = set(hv) | set(rv)
                dot = sum(hv.get(g, 0) * rv.get(g, 0) for g in keys)
                nh = math.sqrt(sum(v * v for v in hv.values()))
                nr = math.sqrt(sum(v * v for v in rv.values()))
                sims.append(dot / (nh * nr) if nh and nr else 0.0)
            per_n.append(sum(sims) / len(sims))
        total += sum(per_n) / n
    return total / len(hyps)


# ---------------------------------------------------------------- decoding

def exhaustive_decode(step, vocab, max_len, bos=0, eos=1):
    """Best (tokens, log-prob per generated token) over every path that ends
    at EOS or at the length cap."""
    best = None
    frontier = [([bos], 0.0)]
    for t in range(max_len):
        nxt = []
        for seq, lp in frontier:
            dist = step([seq])[0]
            for tok in range(vocab):
                path, total = seq + [tok], lp + float(dist[tok])
                if tok == eos or t == max_len - 1:
                    score = total / (len(path) - 1)
                    if best is None or score > best[1]:
                        best = (path, score)
                else:
                    nxt.append((path, total))
        frontier = nxt
    return best
