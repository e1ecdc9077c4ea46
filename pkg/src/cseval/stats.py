"""Alignment statistics for the evaluation benchmark.

The central quantity is the sample-level correlation: predicted and human
scores are grouped by hate speech, a rank correlation is computed inside
each group across the systems that answered it, and the per-group values
are averaged. Groups whose correlation is undefined (fewer than two paired
scores, or zero variance on either side) are skipped and counted.

Also here: the unified quality score that folds the four dimensions onto a
single 1-5 axis, Krippendorff's alpha for inter-annotator agreement
(interval distance), NDCG for system-ranking fidelity, and the repeated
subsampling protocol that reports correlation stability as mean/std over
(sample size x seed) trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import (
    AGGRESSIVENESS,
    DIMENSIONS,
    SUITABLENESS,
    Corpus,
    Dimension,
    dimension,
)


class StatsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# rank correlation
# ---------------------------------------------------------------------------


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """Fractional ranks (1-based); tied values share the mean of their ranks."""
    a = np.asarray(values, dtype=float)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a), dtype=float)
    sorted_vals = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _check_pair(auto: Sequence[float], human: Sequence[float]) -> None:
    if len(auto) != len(human):
        raise StatsError(f"length mismatch: {len(auto)} vs {len(human)}")
    if len(auto) < 2:
        raise StatsError("need at least two paired scores")


def spearman(auto: Sequence[float], human: Sequence[float]) -> float | None:
    """Spearman rho: Pearson correlation of fractional ranks.

    Returns None when either side has zero variance. Invariant under
    strictly increasing transforms of either side.
    """
    _check_pair(auto, human)
    ra = average_ranks(auto)
    rh = average_ranks(human)
    ra -= ra.mean()
    rh -= rh.mean()
    denom = math.sqrt(float((ra * ra).sum()) * float((rh * rh).sum()))
    if denom == 0.0:
        return None
    rho = float((ra * rh).sum()) / denom
    return max(-1.0, min(1.0, rho))


def kendall_tau(auto: Sequence[float], human: Sequence[float]) -> float | None:
    """Kendall's tau-b with the tie-corrected denominator.

    Returns None when either side is constant (tie-corrected denominator
    zero). Invariant under strictly increasing transforms of either side.
    """
    _check_pair(auto, human)
    x = np.asarray(auto, dtype=float)
    y = np.asarray(human, dtype=float)
    n = len(x)
    iu = np.triu_indices(n, k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    s = dx * dy
    concordant = int((s > 0).sum())
    discordant = int((s < 0).sum())
    ties_x = int((dx == 0).sum())
    ties_y = int((dy == 0).sum())
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        return None
    tau = (concordant - discordant) / denom
    return max(-1.0, min(1.0, tau))


CORRELATIONS: dict[str, Callable[[Sequence[float], Sequence[float]], float | None]] = {
    "spearman": spearman,
    "kendall": kendall_tau,
}


@dataclass
class SampleGroup:
    """Paired (auto, human) score vectors for one hate-speech group."""

    condition_id: str
    auto: list[float]
    human: list[float]

    def __post_init__(self) -> None:
        if len(self.auto) != len(self.human):
            raise StatsError(
                f"group {self.condition_id!r}: auto/human lengths differ"
            )


def build_groups(
    corpus: Corpus, auto_scores: Mapping[str, float], dim: Dimension
) -> list[SampleGroup]:
    """Pair predicted scores with human consensus, grouped by hate speech.

    Samples without a predicted score are left out of their group's vectors
    (pairwise deletion); groups that end up empty are dropped, and groups
    with a single pair are kept so the caller's skip counter sees them.
    """
    groups: list[SampleGroup] = []
    for hs, indices in corpus.group_index.items():
        auto: list[float] = []
        human: list[float] = []
        for i in indices:
            sample = corpus.samples[i]
            if sample.id not in auto_scores:
                continue
            auto.append(float(auto_scores[sample.id]))
            human.append(float(sample.judgment.score(dim)))
        if auto:
            groups.append(SampleGroup(hs, auto, human))
    return groups


def sample_level_corr(
    groups: Iterable[SampleGroup], corr: str = "spearman"
) -> tuple[float, int]:
    """Mean per-group correlation and the number of skipped groups.

    A group is skipped when its correlation is undefined: fewer than two
    paired scores or zero variance on either side. Raises StatsError when
    every group is skipped.
    """
    try:
        corr_fn = CORRELATIONS[corr]
    except KeyError:
        raise StatsError(f"unknown correlation {corr!r}") from None
    values: list[float] = []
    skipped = 0
    total = 0
    for group in groups:
        total += 1
        if len(group.auto) < 2:
            skipped += 1
            continue
        value = corr_fn(group.auto, group.human)
        if value is None:
            skipped += 1
            continue
        values.append(value)
    if total == 0:
        raise StatsError("no groups to correlate")
    if not values:
        raise StatsError(f"no defined correlations (all {total} groups skipped)")
    return float(np.mean(values)), skipped


def normalize(scores: Sequence[float], lo: float, hi: float) -> list[float]:
    """Affine map from [lo, hi] onto [0, 1]."""
    if hi <= lo:
        raise StatsError(f"invalid scale ({lo},{hi})")
    out = []
    for s in scores:
        if not lo <= s <= hi:
            raise StatsError(f"score {s} outside scale ({lo},{hi})")
        out.append((s - lo) / (hi - lo))
    return out


# ---------------------------------------------------------------------------
# unified score
# ---------------------------------------------------------------------------


def unified_score(
    relevance: float, coherence: float, aggressiveness: float, suitableness: float
) -> float:
    """Mean of the four dimensions on a shared 1-5 higher-is-better axis.

    Aggressiveness is reversed (6 - score); suitableness is rescaled from
    (1,3) to (1,5) before averaging. Accepts fractional inputs so it can be
    applied to per-system means as well as single judgments.
    """
    for name, value, dim_lo, dim_hi in (
        ("relevance", relevance, 1, 5),
        ("coherence", coherence, 1, 5),
        ("aggressiveness", aggressiveness, 1, 5),
        ("suitableness", suitableness, 1, 3),
    ):
        if not dim_lo <= value <= dim_hi:
            raise StatsError(f"{name} score {value} outside scale ({dim_lo},{dim_hi})")
    lo, hi = SUITABLENESS.scale_min, SUITABLENESS.scale_max
    rescaled_sui = (suitableness - lo) / (hi - lo) * 4.0 + 1.0
    flipped_agg = (AGGRESSIVENESS.scale_min + AGGRESSIVENESS.scale_max) - aggressiveness
    return (relevance + flipped_agg + coherence + rescaled_sui) / 4.0


# ---------------------------------------------------------------------------
# inter-annotator agreement
# ---------------------------------------------------------------------------


def krippendorff_alpha(
    ratings: Sequence[Sequence[float | None]] | np.ndarray, metric: str = "interval"
) -> float:
    """Krippendorff's alpha for an annotators x items matrix.

    Missing ratings are None/NaN. Only the interval distance
    delta(a, b) = (a - b)^2 is supported; for it both the observed and the
    expected disagreement reduce to sum-of-squares identities, so the
    computation is linear in the number of ratings. Items with fewer than
    two ratings cannot be paired and are ignored; alpha is 1.0 when all
    pairable values agree exactly (including the no-variance case where the
    expected disagreement is zero).
    """
    if metric != "interval":
        raise StatsError(f"unsupported distance metric {metric!r}")
    try:
        a = np.asarray(
            [[np.nan if v is None else float(v) for v in row] for row in ratings],
            dtype=float,
        )
    except (TypeError, ValueError):
        raise StatsError("ratings must be a 2-D annotators x items matrix") from None
    if a.ndim != 2:
        raise StatsError("ratings must be a 2-D annotators x items matrix")
    present = ~np.isnan(a)
    counts = present.sum(axis=0)
    pairable = counts >= 2
    if int(pairable.sum()) < 2:
        raise StatsError(
            "insufficient overlap: need at least two items with two or more ratings"
        )
    cols = np.where(pairable)[0]
    m_u = counts[cols].astype(float)
    filled = np.where(present, a, 0.0)
    col_sum = filled[:, cols].sum(axis=0)
    col_sq = (filled[:, cols] ** 2).sum(axis=0)
    # sum over ordered pairs within a unit: sum_{i!=j} (v_i - v_j)^2
    #   = 2*m*sum(v^2) - 2*(sum v)^2
    per_unit = (2.0 * m_u * col_sq - 2.0 * col_sum**2) / (m_u - 1.0)
    n = float(m_u.sum())
    d_observed = float(per_unit.sum()) / n
    s1 = float(col_sum.sum())
    s2 = float(col_sq.sum())
    d_expected = (2.0 * n * s2 - 2.0 * s1**2) / (n * (n - 1.0))
    if d_expected == 0.0:
        return 1.0
    return 1.0 - d_observed / d_expected


def corpus_agreement(corpus: Corpus) -> dict[str, float]:
    """Per-dimension alpha from raw annotator ratings, plus their average.

    Requires raw_ratings on the samples; the i-th raw rating of every
    sample is attributed to annotator i.
    """
    out: dict[str, float] = {}
    for dim in DIMENSIONS:
        columns: list[list[float | None]] = []
        width = 0
        for sample in corpus:
            raw = sample.judgment.raw_ratings
            if raw and dim.key in raw:
                columns.append(list(raw[dim.key]))
                width = max(width, len(raw[dim.key]))
        if not columns:
            raise StatsError(f"no raw ratings for dimension {dim.key!r}")
        matrix = [
            [col[i] if i < len(col) else None for col in columns]
            for i in range(width)
        ]
        out[dim.key] = krippendorff_alpha(matrix)
    out["average"] = float(np.mean([out[d.key] for d in DIMENSIONS]))
    return out


# ---------------------------------------------------------------------------
# ranking fidelity
# ---------------------------------------------------------------------------


def ndcg(predicted: Sequence[float], gold: Sequence[float]) -> float:
    """NDCG of the predicted ordering against gold relevances.

    Items are sorted by predicted score descending (ties broken by input
    position, so the result is deterministic); DCG discounts relevance at
    1-based position i by log2(i+1). All-zero gold relevances are a
    degenerate case and return 1.0.
    """
    if len(predicted) != len(gold):
        raise StatsError("predicted and gold lengths differ")
    if not predicted:
        raise StatsError("ndcg of empty ranking")
    if any(g < 0 for g in gold):
        raise StatsError("gold relevances must be non-negative")
    order = sorted(range(len(predicted)), key=lambda i: (-predicted[i], i))
    dcg = sum(gold[i] / math.log2(pos + 2) for pos, i in enumerate(order))
    ideal = sum(
        g / math.log2(pos + 2) for pos, g in enumerate(sorted(gold, reverse=True))
    )
    if ideal == 0.0:
        return 1.0
    return dcg / ideal


# ---------------------------------------------------------------------------
# repeated subsampling protocol
# ---------------------------------------------------------------------------


@dataclass
class TrialSpec:
    """Grid of (sample size, seed) trials.

    Default sizes start at 100 and step by 500 up to the corpus size, which
    yields 13 sizes for a 6100-sample test set; default seeds are (1, 2, 3),
    39 trials in total.
    """

    sample_sizes: tuple[int, ...] | None = None
    seeds: tuple[int, ...] = (1, 2, 3)

    def __post_init__(self) -> None:
        if self.sample_sizes is not None:
            self.sample_sizes = tuple(int(s) for s in self.sample_sizes)
            if not self.sample_sizes:
                raise StatsError("sample_sizes must be non-empty when given")
            if any(s <= 0 for s in self.sample_sizes):
                raise StatsError("sample sizes must be positive")
            if list(self.sample_sizes) != sorted(set(self.sample_sizes)):
                raise StatsError("sample sizes must be strictly increasing")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise StatsError("at least one seed is required")

    def sizes_for(self, corpus_size: int) -> tuple[int, ...]:
        if self.sample_sizes is not None:
            if self.sample_sizes[-1] > corpus_size:
                raise StatsError(
                    f"largest sample size {self.sample_sizes[-1]} exceeds corpus "
                    f"size {corpus_size}"
                )
            return self.sample_sizes
        if corpus_size < 100:
            raise StatsError(
                f"corpus too small ({corpus_size}) for default sizes; pass sample_sizes"
            )
        return tuple(range(100, corpus_size + 1, 500))


@dataclass
class TrialResult:
    size: int
    seed: int
    value: float | None
    skipped_groups: int


@dataclass
class TrialAggregate:
    evaluator_id: str
    dimension: str
    mean: float | None
    std: float | None
    trials: list[TrialResult] = field(default_factory=list)

    @property
    def defined(self) -> int:
        return sum(1 for t in self.trials if t.value is not None)


def trial_protocol(
    corpus: Corpus,
    scores: Mapping[str, Mapping[str, Mapping[str, float]]],
    spec: TrialSpec,
    corr: str = "spearman",
) -> list[TrialAggregate]:
    """Correlation stability over repeated subsampling.

    `scores` maps evaluator id -> dimension key -> sample id -> predicted
    score. Each trial (n, s) draws n samples without replacement using
    random state s, rebuilds hate-speech groups on the subset, and computes
    the sample-level correlation; groups reduced below two members are
    skipped like any other undefined group. Aggregates are mean and std
    (ddof=1) over the defined trials; an aggregate with no defined trial
    reports None.
    """
    sizes = spec.sizes_for(len(corpus))
    subsets: list[tuple[int, int, Corpus]] = []
    for size in sizes:
        for s in spec.seeds:
            rng = np.random.default_rng(s)
            idx = sorted(rng.choice(len(corpus), size=size, replace=False).tolist())
            subsets.append((size, s, Corpus([corpus.samples[i] for i in idx])))
    out: list[TrialAggregate] = []
    for evaluator_id in scores:
        for dim_key, by_sample in scores[evaluator_id].items():
            dim = dimension(dim_key)
            trials: list[TrialResult] = []
            for size, s, subset in subsets:
                groups = build_groups(subset, by_sample, dim)
                try:
                    value, skipped = sample_level_corr(groups, corr)
                except StatsError:
                    value, skipped = None, len(groups)
                trials.append(TrialResult(size, s, value, skipped))
            defined = [t.value for t in trials if t.value is not None]
            mean = float(np.mean(defined)) if defined else None
            std = (
                float(np.std(defined, ddof=1))
                if len(defined) > 1
                else (0.0 if defined else None)
            )
            out.append(TrialAggregate(evaluator_id, dim_key, mean, std, trials))
    return out
