"""ROUGE-1, ROUGE-2 and ROUGE-L for impression/reference pairs.

Tokenization is deliberately plain: lowercase, split on anything that is not
an ASCII letter or digit, no stemming or stopword removal. N-gram overlap is
clipped per gram; ROUGE-L uses the standard LCS dynamic program. Corpus
scores are unweighted means of the per-pair precision/recall/F1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import RadsumError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class EmptyCorpus(RadsumError):
    pass


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _score(match: float, n_cand: int, n_ref: int) -> RougeScore:
    p = match / n_cand if n_cand else 0.0
    r = match / n_ref if n_ref else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return RougeScore(precision=p, recall=r, f1=f1)


def rouge_tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _ngram_counts(tokens: Sequence[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i:i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    """Clipped n-gram overlap; empty n-gram sets on either side score zero."""
    if n < 1:
        raise RadsumError(f"n must be >= 1, got {n}")
    cand = _ngram_counts(rouge_tokenize(candidate), n)
    ref = _ngram_counts(rouge_tokenize(reference), n)
    n_cand = sum(cand.values())
    n_ref = sum(ref.values())
    if n_cand == 0 or n_ref == 0:
        return RougeScore(0.0, 0.0, 0.0)
    match = sum(min(count, ref.get(gram, 0)) for gram, count in cand.items())
    return _score(match, n_cand, n_ref)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    cand = rouge_tokenize(candidate)
    ref = rouge_tokenize(reference)
    if not cand or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    return _score(lcs_length(cand, ref), len(cand), len(ref))


@dataclass(frozen=True)
class CorpusRouge:
    rouge1: RougeScore
    rouge2: RougeScore
    rougeL: RougeScore

    def as_rows(self) -> list[tuple[str, RougeScore]]:
        return [("rouge-1", self.rouge1), ("rouge-2", self.rouge2), ("rouge-l", self.rougeL)]


def pair_rouge(candidate: str, reference: str) -> CorpusRouge:
    return CorpusRouge(rouge1=rouge_n(candidate, reference, 1),
                       rouge2=rouge_n(candidate, reference, 2),
                       rougeL=rouge_l(candidate, reference))


def corpus_rouge(pairs: Iterable[tuple[str, str]]) -> CorpusRouge:
    """Arithmetic mean of per-pair scores for each metric."""
    scored = [pair_rouge(cand, ref) for cand, ref in pairs]
    if not scored:
        raise EmptyCorpus("no candidate/reference pairs to score")

    def mean(metric: str) -> RougeScore:
        parts = [getattr(s, metric) for s in scored]
        k = len(parts)
        return RougeScore(precision=sum(p.precision for p in parts) / k,
                          recall=sum(p.recall for p in parts) / k,
                          f1=sum(p.f1 for p in parts) / k)

    return CorpusRouge(rouge1=mean("rouge1"), rouge2=mean("rouge2"), rougeL=mean("rougeL"))
