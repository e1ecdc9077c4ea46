"""
Rank statistics, agreement, and ranking fidelity
================================================

The statistics layer used by the meta-evaluation: tie-aware Spearman and
Kendall tau-b, sample-level correlation over hate-speech groups,
Krippendorff's interval alpha, and NDCG over system rankings. Run with:

    python3 demos/02_rank_statistics.py
"""

import numpy as np

from cseval.corpus import RELEVANCE, synth_fixture
from cseval.stats import (
    build_groups,
    corpus_agreement,
    kendall_tau,
    krippendorff_alpha,
    ndcg,
    sample_level_corr,
    spearman,
)

# Both correlations handle ties via fractional ranks / tau-b and return
# None (rather than NaN) when one side is constant.
x = [1.0, 2.0, 2.0, 3.0, 5.0]
y = [1.2, 1.9, 2.4, 2.2, 4.0]
print("spearman:", f"{spearman(x, y):.4f}")
print("kendall: ", f"{kendall_tau(x, y):.4f}")
print("constant side:", spearman([1.0, 1.0], [1.0, 2.0]))
print()

# Sample-level correlation is the mean correlation computed inside each
# hate-speech group, comparing evaluator scores with human judgments
# across the systems that answered the same hate speech. Groups where
# either side has no variance are skipped and counted.
corpus, latents = synth_fixture(n_groups=30, models_per_group=4, seed=7)
rng = np.random.default_rng(0)
noisy = {
    s.id: s.judgment.relevance + rng.normal(0.0, 0.8) for s in corpus
}
groups = build_groups(corpus, noisy, RELEVANCE)
rho, skipped = sample_level_corr(groups, "spearman")
print(f"sample-level spearman over {len(groups)} groups: {rho:.4f} "
      f"({skipped} skipped)")
print()

# Krippendorff's alpha (interval metric): 1.0 on perfect agreement,
# around 0 for unrelated ratings, negative for systematic disagreement.
perfect = [[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]
print("alpha, perfect agreement: ", krippendorff_alpha(perfect))
print("alpha, inverted ratings:  ", krippendorff_alpha([[1.0, 2.0], [2.0, 1.0]]))
annotated, _ = synth_fixture(n_groups=80, models_per_group=2, seed=3, annotators=3,
                             annotator_noise=0.6)
print("alpha on a 3-annotator fixture, by dimension:")
for key, value in corpus_agreement(annotated).items():
    print(f"  {key:<15} {value:.4f}")
print()

# NDCG compares a predicted system ordering with the human one; the gain
# of each system is its (reversed) human rank, so mistakes at the top of
# the ranking cost the most.
human_gain = [2.0, 1.0, 0.0]
print("ndcg, predicted matches human:", ndcg([0.9, 0.6, 0.2], human_gain))
print("ndcg, top two swapped:        ", f"{ndcg([0.6, 0.9, 0.2], human_gain):.4f}")
print("ndcg, fully reversed:         ", f"{ndcg([0.2, 0.6, 0.9], human_gain):.4f}")
