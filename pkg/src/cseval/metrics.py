"""Reference-based lexical metrics: BLEU, ROUGE, and a light METEOR.

All three are implemented from first principles so the exact formulas are
inspectable and pinned by tests:

* ``bleu`` — modified n-gram precision with multi-reference clipping, the
  closest-reference brevity penalty, a uniform-weight geometric mean, and
  add-one smoothing applied only when a level of order n >= 2 has zero
  matches. Levels for which the candidate has no n-grams at all are dropped
  from the mean.
* ``rouge`` — F1 over unigram/bigram overlap (rouge1/rouge2) or over the
  longest common subsequence (rougeL); multi-reference scores take the max.
* ``meteor_lite`` — unigram alignment in two stages (exact surface match,
  then a fixed suffix-stripping stem match), recall-weighted harmonic mean
  F = P*R / (alpha*P + (1-alpha)*R) with alpha=0.9, and a fragmentation
  penalty gamma*(chunks/matches)**beta with gamma=0.5, beta=3. No WordNet
  or paraphrase stage, hence "lite"; scores are not comparable to full
  METEOR implementations.

Tokenization is shared by every metric: lowercase, punctuation split into
separate tokens, whitespace collapsed.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .corpus import Corpus

TokenSeq = list[str]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5

METRIC_IDS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge1", "rouge2", "rougeL", "meteor")


class UnknownMetricError(ValueError):
    pass


@dataclass(frozen=True)
class MetricScore:
    """A metric value in [0, 1]; `degenerate` marks empty-input fallbacks."""

    metric_id: str
    value: float
    degenerate: bool = False


def tokenize(text: str) -> TokenSeq:
    """Lowercase and split into word and punctuation tokens."""
    return _TOKEN_RE.findall(text.lower())


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def ngram_clipped_matches(
    candidate: Sequence[str], references: Sequence[Sequence[str]], n: int
) -> tuple[int, int]:
    """(clipped matches, candidate n-gram count) for order n.

    Each candidate n-gram's count is clipped by the maximum count of that
    n-gram in any single reference; adding a reference can therefore never
    decrease the clipped match count.
    """
    cand = _ngrams(candidate, n)
    total = sum(cand.values())
    if total == 0:
        return 0, 0
    max_ref: Counter = Counter()
    for ref in references:
        for gram, count in _ngrams(ref, n).items():
            if count > max_ref[gram]:
                max_ref[gram] = count
    matches = sum(min(count, max_ref[gram]) for gram, count in cand.items())
    return matches, total


def bleu(
    candidate: Sequence[str], references: Sequence[Sequence[str]], max_n: int = 4
) -> MetricScore:
    metric_id = f"bleu{max_n}"
    if not references:
        raise ValueError("bleu requires at least one reference")
    if not 1 <= max_n <= 4:
        raise ValueError(f"max_n must be in 1..4, got {max_n}")
    if not candidate:
        return MetricScore(metric_id, 0.0, degenerate=True)
    log_sum = 0.0
    levels = 0
    for n in range(1, max_n + 1):
        matches, total = ngram_clipped_matches(candidate, references, n)
        if total == 0:
            continue
        if matches == 0:
            if n == 1:
                return MetricScore(metric_id, 0.0)
            p = 1.0 / (total + 1.0)
        else:
            p = matches / total
        log_sum += math.log(p)
        levels += 1
    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return MetricScore(metric_id, bp * math.exp(log_sum / levels))


def _f1(matches: float, cand_total: float, ref_total: float) -> float:
    if cand_total == 0 or ref_total == 0:
        return 0.0
    p = matches / cand_total
    r = matches / ref_total
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                cur.append(prev[j - 1] + 1)
            else:
                cur.append(max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge(
    candidate: Sequence[str], references: Sequence[Sequence[str]], variant: str
) -> MetricScore:
    if variant not in ("rouge1", "rouge2", "rougeL"):
        raise UnknownMetricError(f"unknown rouge variant {variant!r}")
    if not references:
        raise ValueError("rouge requires at least one reference")
    if not candidate:
        return MetricScore(variant, 0.0, degenerate=True)
    best = 0.0
    for ref in references:
        if variant == "rougeL":
            score = _f1(_lcs_length(candidate, ref), len(candidate), len(ref))
        else:
            n = 1 if variant == "rouge1" else 2
            cand = _ngrams(candidate, n)
            refc = _ngrams(ref, n)
            matches = sum(min(c, refc[g]) for g, c in cand.items())
            score = _f1(matches, sum(cand.values()), sum(refc.values()))
        best = max(best, score)
    return MetricScore(variant, best)


_STEM_SUFFIXES = ("edly", "ing", "ies", "ed", "es", "ly", "s")


def stem(token: str) -> str:
    """Fixed suffix-stripping stemmer used by meteor_lite's second stage."""
    for suffix in _STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= 3:
            if suffix == "s" and token.endswith("ss"):
                continue
            return token[: -len(suffix)]
    return token


def _align(candidate: Sequence[str], reference: Sequence[str]) -> list[tuple[int, int]]:
    """Two-stage greedy unigram alignment: exact first, then stems.

    Candidate positions are visited left to right and matched to the
    leftmost unmatched reference position, which makes the alignment
    deterministic.
    """
    pairs: list[tuple[int, int]] = []
    cand_free = [True] * len(candidate)
    ref_free = [True] * len(reference)
    for key in (lambda t: t, stem):
        ref_keys = [key(t) for t in reference]
        for i, tok in enumerate(candidate):
            if not cand_free[i]:
                continue
            want = key(tok)
            for j, ref_key in enumerate(ref_keys):
                if ref_free[j] and ref_key == want:
                    pairs.append((i, j))
                    cand_free[i] = False
                    ref_free[j] = False
                    break
    pairs.sort()
    return pairs


def _chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(
    candidate: Sequence[str], references: Sequence[Sequence[str]]
) -> MetricScore:
    if not references:
        raise ValueError("meteor_lite requires at least one reference")
    if not candidate:
        return MetricScore("meteor", 0.0, degenerate=True)
    best = 0.0
    for ref in references:
        if not ref:
            continue
        pairs = _align(candidate, ref)
        m = len(pairs)
        if m == 0:
            continue
        p = m / len(candidate)
        r = m / len(ref)
        f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r)
        penalty = METEOR_GAMMA * (_chunks(pairs) / m) ** METEOR_BETA
        best = max(best, f_mean * (1.0 - penalty))
    return MetricScore("meteor", best)


def compute_metric(
    metric_id: str, candidate: Sequence[str], references: Sequence[Sequence[str]]
) -> MetricScore:
    """Dispatch on a registry id from METRIC_IDS."""
    if metric_id.startswith("bleu") and metric_id in METRIC_IDS:
        return bleu(candidate, references, max_n=int(metric_id[-1]))
    if metric_id.startswith("rouge") and metric_id in METRIC_IDS:
        return rouge(candidate, references, metric_id)
    if metric_id == "meteor":
        return meteor_lite(candidate, references)
    raise UnknownMetricError(
        f"unknown metric {metric_id!r}; known: {', '.join(METRIC_IDS)}"
    )


def score_corpus(corpus: Corpus, metric_id: str) -> dict[str, MetricScore]:
    """Score every sample's counterspeech against its references."""
    if metric_id not in METRIC_IDS:
        raise UnknownMetricError(
            f"unknown metric {metric_id!r}; known: {', '.join(METRIC_IDS)}"
        )
    out: dict[str, MetricScore] = {}
    for sample in corpus:
        cand = tokenize(sample.counterspeech)
        refs = [tokenize(r) for r in sample.references]
        out[sample.id] = compute_metric(metric_id, cand, refs)
    return out
