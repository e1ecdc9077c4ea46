"""Reference implementations used only by the tests.

Each function here recomputes a library quantity by a deliberately
different route (brute force, exact fractions, textbook formulas) so the
tests compare two independent derivations instead of a function against
itself. Keep these slow and obvious; never import them in src/.
"""

from __future__ import annotations

import math
from fractions import Fraction


# ---------------------------------------------------------------------------
# lexical metrics
# ---------------------------------------------------------------------------


def ngram_list(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def count_occurrences(grams: list[tuple[str, ...]], gram: tuple[str, ...]) -> int:
    return sum(1 for g in grams if g == gram)


def oracle_bleu(
    candidate: list[str], references: list[list[str]], max_n: int = 4
) -> float:
    """BLEU by scanning lists and exact fractions.

    Same conventions as the library: clipped counts against the max
    reference count, closest-length reference for brevity (ties to the
    shorter), add-one smoothing only when an order n >= 2 has zero
    matches, orders with no candidate n-grams dropped from the geometric
    mean, zero unigram matches -> 0.0.
    """
    if not candidate:
        return 0.0
    precisions: list[Fraction] = []
    for n in range(1, max_n + 1):
        cand_grams = ngram_list(candidate, n)
        if not cand_grams:
            continue
        matches = 0
        for gram in set(cand_grams):
            in_cand = count_occurrences(cand_grams, gram)
            best = max(
                count_occurrences(ngram_list(ref, n), gram) for ref in references
            )
            matches += min(in_cand, best)
        total = len(cand_grams)
        if matches == 0:
            if n == 1:
                return 0.0
            precisions.append(Fraction(1, total + 1))
        else:
            precisions.append(Fraction(matches, total))
    if not precisions:
        return 0.0
    log_sum = sum(math.log(float(p)) for p in precisions)
    geo = math.exp(log_sum / len(precisions))
    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda L: (abs(L - c), L))
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * geo


def oracle_lcs(a: list[str], b: list[str]) -> int:
    """LCS length by memoized recursion."""
    seen: dict[tuple[int, int], int] = {}

    def go(i: int, j: int) -> int:
        if i == len(a) or j == len(b):
            return 0
        key = (i, j)
        if key not in seen:
            if a[i] == b[j]:
                seen[key] = 1 + go(i + 1, j + 1)
            else:
                seen[key] = max(go(i + 1, j), go(i, j + 1))
        return seen[key]

    return go(0, 0)


def _f1(matches: int, cand_total: int, ref_total: int) -> float:
    if matches == 0 or cand_total == 0 or ref_total == 0:
        return 0.0
    p = matches / cand_total
    r = matches / ref_total
    return 2 * p * r / (p + r)


def oracle_rouge_n(candidate: list[str], references: list[list[str]], n: int) -> float:
    cand_grams = ngram_list(candidate, n)
    best = 0.0
    for ref in references:
        ref_grams = ngram_list(ref, n)
        matches = 0
        for gram in set(cand_grams):
            matches += min(
                count_occurrences(cand_grams, gram),
                count_occurrences(ref_grams, gram),
            )
        best = max(best, _f1(matches, len(cand_grams), len(ref_grams)))
    return best


def oracle_rouge_l(candidate: list[str], references: list[list[str]]) -> float:
    best = 0.0
    for ref in references:
        lcs = oracle_lcs(candidate, ref)
        best = max(best, _f1(lcs, len(candidate), len(ref)))
    return best


def oracle_stem(token: str) -> str:
    for suffix in ("edly", "ing", "ies", "ed", "es", "ly", "s"):
        if token.endswith(suffix):
            stemmed = token[: -len(suffix)]
            if len(stemmed) >= 3 and not (suffix == "s" and token.endswith("ss")):
                return stemmed
    return token


def oracle_meteor(
    candidate: list[str],
    references: list[list[str]],
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
) -> float:
    """Two-stage greedy alignment, fragmentation penalty, max over refs."""
    best = 0.0
    for ref in references:
        pairs: list[tuple[int, int]] = []
        used_ref: set[int] = set()
        matched_cand: set[int] = set()
        for stage in ("exact", "stem"):
            for i, tok in enumerate(candidate):
                if i in matched_cand:
                    continue
                for j, rtok in enumerate(ref):
                    if j in used_ref:
                        continue
                    if (stage == "exact" and tok == rtok) or (
                        stage == "stem" and oracle_stem(tok) == oracle_stem(rtok)
                    ):
                        pairs.append((i, j))
                        used_ref.add(j)
                        matched_cand.add(i)
                        break
        m = len(pairs)
        if m == 0 or not candidate or not ref:
            continue
        precision = m / len(candidate)
        recall = m / len(ref)
        f_mean = precision * recall / (alpha * precision + (1 - alpha) * recall)
        pairs.sort()
        chunks = 1
        for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
            if not (i1 == i0 + 1 and j1 == j0 + 1):
                chunks += 1
        penalty = gamma * (chunks / m) ** beta
        best = max(best, f_mean * (1 - penalty))
    return best


# ---------------------------------------------------------------------------
# rank statistics
# ---------------------------------------------------------------------------


def oracle_ranks(values: list[float]) -> list[float]:
    """Fractional ranks by counting: rank = #smaller + (#equal + 1)/2."""
    out = []
    for v in values:
        smaller = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(smaller + (equal + 1) / 2)
    return out


def oracle_spearman(x: list[float], y: list[float]) -> float | None:
    rx, ry = oracle_ranks(x), oracle_ranks(y)
    n = len(x)
    mx = sum(rx) / n
    my = sum(ry) / n
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    dx = math.sqrt(sum((a - mx) ** 2 for a in rx))
    dy = math.sqrt(sum((b - my) ** 2 for b in ry))
    if dx == 0 or dy == 0:
        return None
    return max(-1.0, min(1.0, num / (dx * dy)))


def oracle_kendall(x: list[float], y: list[float]) -> float | None:
    """Tau-b by explicit pair enumeration."""
    n = len(x)
    concordant = discordant = ties_x = ties_y = ties_both = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = (x[i] > x[j]) - (x[i] < x[j])
            b = (y[i] > y[j]) - (y[i] < y[j])
            if a == 0 and b == 0:
                ties_both += 1
            elif a == 0:
                ties_x += 1
            elif b == 0:
                ties_y += 1
            elif a == b:
                concordant += 1
            else:
                discordant += 1
    pairs = n * (n - 1) // 2
    denom_x = pairs - ties_x - ties_both
    denom_y = pairs - ties_y - ties_both
    if denom_x == 0 or denom_y == 0:
        return None
    tau = (concordant - discordant) / math.sqrt(denom_x * denom_y)
    return max(-1.0, min(1.0, tau))


# ---------------------------------------------------------------------------
# agreement
# ---------------------------------------------------------------------------


def oracle_krippendorff(matrix: list[list[float | None]]) -> float | None:
    """Interval alpha via the full coincidence matrix.

    `matrix` is annotators x items. Builds the o_ck and e_ck matrices over
    observed value categories, the textbook route; returns None for the
    error cases the library raises on (fewer than two pairable items).
    """
    units: list[list[float]] = []
    n_items = len(matrix[0]) if matrix else 0
    for u in range(n_items):
        vals = [row[u] for row in matrix if row[u] is not None]
        if len(vals) >= 2:
            units.append(vals)
    if not units:
        return None
    n_total = sum(len(vals) for vals in units)
    if n_total < 2:
        return None
    categories = sorted({v for vals in units for v in vals})
    o = {(c, k): 0.0 for c in categories for k in categories}
    for vals in units:
        m_u = len(vals)
        for i, vi in enumerate(vals):
            for j, vj in enumerate(vals):
                if i != j:
                    o[(vi, vj)] += 1.0 / (m_u - 1)
    margins = {c: sum(o[(c, k)] for k in categories) for c in categories}
    d_o = sum(o[(c, k)] * (c - k) ** 2 for c in categories for k in categories)
    d_e = (
        sum(
            margins[c] * margins[k] * (c - k) ** 2
            for c in categories
            for k in categories
        )
        / (n_total - 1)
    )
    if d_e == 0:
        return 1.0
    return 1.0 - d_o / d_e


# ---------------------------------------------------------------------------
# ranking fidelity and the unified score
# ---------------------------------------------------------------------------


def oracle_ndcg(predicted: list[float], gold: list[float]) -> float:
    order = sorted(range(len(predicted)), key=lambda i: (-predicted[i], i))
    dcg = sum(gold[i] / math.log2(pos + 2) for pos, i in enumerate(order))
    ideal = sum(
        g / math.log2(pos + 2) for pos, g in enumerate(sorted(gold, reverse=True))
    )
    if ideal == 0:
        return 1.0
    return dcg / ideal


def oracle_unified(
    relevance: float, aggressiveness: float, coherence: float, suitableness: float
) -> float:
    rescaled_sui = (suitableness - 1.0) / 2.0 * 4.0 + 1.0
    return (relevance + (6.0 - aggressiveness) + coherence + rescaled_sui) / 4.0
