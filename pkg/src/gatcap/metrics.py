"""Caption metrics: BLEU-1..4, ROUGE-L and CIDEr over tokenized corpora.

Captions are sequences of hashable tokens (strings or ids). Every metric
takes ``candidates`` (one sequence per instance) and ``references`` (a list
of sequences per instance) and returns a :class:`CorpusScore`.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

Caption = Sequence
NGramCounts = Counter  # n-gram tuple -> count


def ngrams(tokens: Caption, n: int) -> NGramCounts:
    """Counts of all contiguous ``n``-grams of ``tokens``."""
    tokens = tuple(tokens)
    return Counter(tokens[i: i + n] for i in range(len(tokens) - n + 1))


@dataclass
class CorpusScore:
    metric: str
    corpus: float
    per_instance: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"corpus": self.corpus, "per_instance": list(self.per_instance)}


def _check(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} reference sets")
    for i, refs in enumerate(references):
        if not refs:
            raise ValueError(f"instance {i} has no references")


# ---------------------------------------------------------------- BLEU

def _closest_ref_len(c: int, refs) -> int:
    # ties go to the shorter reference
    return min((abs(len(r) - c), len(r)) for r in refs)[1]


def _bleu_stats(cand: Caption, refs, n_max: int):
    """(clipped matches per order, candidate n-gram totals per order, c, r)."""
    matches, totals = [], []
    for n in range(1, n_max + 1):
        cand_counts = ngrams(cand, n)
        max_ref: Counter = Counter()
        for r in refs:
            max_ref |= ngrams(r, n)
        matches.append(sum(min(k, max_ref[g]) for g, k in cand_counts.items()))
        totals.append(max(0, len(cand) - n + 1))
    return matches, totals, len(cand), _closest_ref_len(len(cand), refs)


def _bleu_from_stats(matches, totals, c: int, r: int) -> float:
    if c == 0 or any(m == 0 for m in matches):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / len(matches)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(log_p)


def bleu(candidates: Sequence[Caption], references: Sequence[Sequence[Caption]], n: int = 4) -> CorpusScore:
    """Corpus BLEU-``n`` from pooled clipped counts, unsmoothed.

    ``per_instance`` holds the same quantity computed on each pair alone.
    """
    if not 1 <= n <= 4:
        raise ValueError("BLEU order must be in 1..4")
    _check(candidates, references)
    tot_m, tot_t, tot_c, tot_r = [0] * n, [0] * n, 0, 0
    per = []
    for cand, refs in zip(candidates, references):
        m, t, c, r = _bleu_stats(cand, refs, n)
        per.append(_bleu_from_stats(m, t, c, r))
        tot_m = [a + b for a, b in zip(tot_m, m)]
        tot_t = [a + b for a, b in zip(tot_t, t)]
        tot_c += c
        tot_r += r
    return CorpusScore(f"BLEU-{n}", _bleu_from_stats(tot_m, tot_t, tot_c, tot_r), per)


# ---------------------------------------------------------------- ROUGE-L

def lcs_length(a: Caption, b: Caption) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _rouge_f(cand: Caption, ref: Caption, beta: float) -> float:
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta ** 2) * p * r / (r + beta ** 2 * p)


def rouge_l(candidates: Sequence[Caption], references: Sequence[Sequence[Caption]],
            beta: float = 1.2) -> CorpusScore:
    """LCS F-measure, best reference per instance, averaged over the corpus."""
    _check(candidates, references)
    per = [max(_rouge_f(c, r, beta) for r in refs) for c, refs in zip(candidates, references)]
    return CorpusScore("ROUGE-L", sum(per) / len(per) if per else 0.0, per)


# ---------------------------------------------------------------- CIDEr

def document_frequency(references: Sequence[Sequence[Caption]], n_max: int = 4) -> Counter:
    """Number of instances whose reference set contains each n-gram."""
    df: Counter = Counter()
    for refs in references:
        seen = set()
        for r in refs:
            for n in range(1, n_max + 1):
                seen.update(ngrams(r, n))
        df.update(seen)
    return df


def _tfidf(tokens: Caption, n: int, df: Counter, log_n: float) -> Dict[tuple, float]:
    return {g: k * (log_n - math.log(max(1, df[g]))) for g, k in ngrams(tokens, n).items()}


def _cosine(a: Dict[tuple, float], b: Dict[tuple, float]) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider(candidates: Sequence[Caption], references: Sequence[Sequence[Caption]],
          n_max: int = 4, sigma: float = 6.0) -> CorpusScore:
    """TF-IDF cosine consensus with a Gaussian length penalty, scaled by 10.

    IDF is ``log(N / df)`` with ``N`` the number of instances and ``df``
    counted over reference sets (floored at 1).
    """
    _check(candidates, references)
    if len(candidates) < 2:
        raise ValueError("CIDEr needs a corpus of at least 2 instances")
    df = document_frequency(references, n_max)
    log_n = math.log(len(references))
    per = []
    for cand, refs in zip(candidates, references):
        score = 0.0
        for n in range(1, n_max + 1):
            vc = _tfidf(cand, n, df, log_n)
            sims = []
            for r in refs:
                penalty = math.exp(-((len(cand) - len(r)) ** 2) / (2 * sigma ** 2))
                sims.append(_cosine(vc, _tfidf(r, n, df, log_n)) * penalty)
            score += sum(sims) / len(sims)
        per.append(10.0 * score / n_max)
    return CorpusScore("CIDEr", sum(per) / len(per), per)


# ---------------------------------------------------------------- reports

def score_all(candidates, references) -> Dict[str, CorpusScore]:
    out = {f"BLEU-{n}": bleu(candidates, references, n) for n in range(1, 5)}
    out["ROUGE-L"] = rouge_l(candidates, references)
    if len(candidates) >= 2:
        out["CIDEr"] = cider(candidates, references)
    return out


def format_table(scores: Dict[str, CorpusScore], extra: Optional[Dict[str, float]] = None) -> str:
    rows = {k: s.corpus for k, s in scores.items()}
    rows.update(extra or {})
    width = max(len(k) for k in rows)
    lines = [f"{'metric':<{width}}  corpus", f"{'-' * width}  ------"]
    lines += [f"{k:<{width}}  {v:.4f}" for k, v in rows.items()]
    return "\n".join(lines)


def report_json(scores: Dict[str, CorpusScore]) -> str:
    return json.dumps({k: s.to_dict() for k, s in scores.items()}, indent=2)


__all__ = [
    "CorpusScore", "NGramCounts", "ngrams", "bleu", "rouge_l", "lcs_length", "cider",
    "document_frequency", "score_all", "format_table", "report_json",
]
