"""
Reference-overlap metrics from scratch
======================================

BLEU-1..4, ROUGE-1/2/L, and a METEOR-lite variant, all computed without
any external metric library, with multi-reference support. Run with:

    python3 demos/01_overlap_metrics.py
"""

from cseval.metrics import METRIC_IDS, compute_metric, tokenize

# Tokenization is deliberately simple: lowercase words plus punctuation
# marks as their own tokens. Every metric shares it.
print("tokens:", tokenize("Don't shout; explain why it's wrong."))
print()

candidate = "the cat sat on a mat"
references = [
    "the cat sat on the mat",
    "a cat was sitting on the mat",
]

# One call per metric id; each returns a MetricScore with the value and
# the per-sample details useful when debugging a score.
print(f"candidate:  {candidate!r}")
for i, ref in enumerate(references):
    print(f"reference {i}: {ref!r}")
print()
for metric_id in METRIC_IDS:
    score = compute_metric(metric_id, candidate, references)
    print(f"  {metric_id:<8} {score.value:.4f}")
print()

def show(metric_id, cand, refs):
    value = compute_metric(metric_id, cand, refs).value
    print(f"  {metric_id}: {cand!r} vs {refs!r} -> {value:.4f}")


# BLEU clips n-gram counts against the best single reference and applies
# the closest-reference brevity penalty, so repeating a matched word does
# not inflate the score.
print("repeated words are clipped:")
show("bleu1", "the the the the", ["the cat"])
print()

# ROUGE-L rewards in-order (not necessarily contiguous) overlap. Word
# order matters to it, unlike ROUGE-1.
print("rouge-L sees word order, rouge1 does not:")
show("rougeL", "the small cat sat", ["the small cat sat quietly"])
show("rougeL", "sat cat small the", ["the small cat sat quietly"])
show("rouge1", "sat cat small the", ["the small cat sat quietly"])
print()

# METEOR-lite adds a light stemmer ("jumped" matches "jumping") and a
# chunk penalty for scrambled matches.
print("meteor stems and penalizes fragmentation:")
show("meteor", "he jumped high", ["he jumping high"])
show("meteor", "b a", ["a b"])
