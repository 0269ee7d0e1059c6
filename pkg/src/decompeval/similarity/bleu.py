"""Sentence-level BLEU over code tokens, plain and keyword-weighted.

Precisions are clipped against the single reference. A zero match count
at order n >= 2 is smoothed to 1 / (total + 1); a zero unigram match
is not smoothed, so a candidate sharing no token with the reference
scores exactly 0.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

from .lexer import Token, TokenSeq


@dataclass(frozen=True)
class BleuDetail:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    empty_candidate: bool = False


def _ngrams(tokens: Sequence[Token], n: int) -> Counter:
    texts = [t.text for t in tokens]
    return Counter(tuple(texts[i:i + n]) for i in range(len(texts) - n + 1))


def _brevity_penalty(c: int, r: int) -> float:
    if c > r:
        return 1.0
    return math.exp(1.0 - r / c)


def _bleu(candidate: TokenSeq, reference: TokenSeq, max_n: int,
          weight: Callable[[tuple[str, ...]], float]) -> BleuDetail:
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    cand, ref = list(candidate), list(reference)
    if not cand:
        return BleuDetail(0.0, (0.0,) * max_n, 0.0, empty_candidate=True)
    precisions = []
    for n in range(1, max_n + 1):
        c_counts, r_counts = _ngrams(cand, n), _ngrams(ref, n)
        matched = sum(weight(g) * min(k, r_counts[g]) for g, k in c_counts.items())
        total = sum(weight(g) * k for g, k in c_counts.items())
        if matched > 0:
            precisions.append(matched / total)
        elif n == 1:
            precisions.append(0.0)
        else:
            precisions.append(1.0 / (total + 1.0))
    bp = _brevity_penalty(len(cand), len(ref))
    if precisions[0] == 0.0:
        return BleuDetail(0.0, tuple(precisions), bp)
    log_mean = math.fsum(math.log(p) for p in precisions) / max_n
    return BleuDetail(bp * math.exp(log_mean), tuple(precisions), bp)


def ngram_bleu_detail(candidate: TokenSeq, reference: TokenSeq, max_n: int = 4) -> BleuDetail:
    return _bleu(candidate, reference, max_n, lambda g: 1.0)


def ngram_bleu(candidate: TokenSeq, reference: TokenSeq, max_n: int = 4) -> float:
    return ngram_bleu_detail(candidate, reference, max_n).score


def weighted_ngram_bleu_detail(candidate: TokenSeq, reference: TokenSeq, max_n: int = 4,
                               keyword_weight: float = 5.0) -> BleuDetail:
    if keyword_weight <= 0:
        raise ValueError("keyword_weight must be positive")
    keywords = {t.text for t in list(candidate) + list(reference) if t.kind == "keyword"}

    def weight(gram: tuple[str, ...]) -> float:
        # mean of per-token weights
        return sum(keyword_weight if t in keywords else 1.0 for t in gram) / len(gram)

    return _bleu(candidate, reference, max_n, weight)


def weighted_ngram_bleu(candidate: TokenSeq, reference: TokenSeq, max_n: int = 4,
                        keyword_weight: float = 5.0) -> float:
    """BLEU where each n-gram counts with the mean weight of its tokens."""
    return weighted_ngram_bleu_detail(candidate, reference, max_n, keyword_weight).score
