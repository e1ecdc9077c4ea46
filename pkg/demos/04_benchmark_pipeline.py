"""
The full meta-evaluation pipeline, end to end
=============================================

Fixture -> calibration -> scoring by four evaluator kinds -> benchmark,
trials, and ranking reports. Everything runs on the mock backend inside
a temporary directory; the same steps map one-to-one onto the CLI
subcommands named in the comments. Run with:

    python3 demos/04_benchmark_pipeline.py
"""

import tempfile
from pathlib import Path

from cseval.calibrate import CalibrationConfig, calibrate
from cseval.cli import main
from cseval.corpus import DIMENSIONS, synth_fixture, write_corpus, write_latents
from cseval.provider import CompletionClient, MockBackend, MockOracleState

root = Path(tempfile.mkdtemp(prefix="cseval-demo-"))
print(f"working under {root}\n")

# ---- fixture (CLI: cseval fixture) ----------------------------------------
# Two disjoint splits: dev to calibrate on, test to evaluate on.
dev, dev_latents = synth_fixture(n_groups=20, models_per_group=3, seed=1)
test, test_latents = synth_fixture(n_groups=30, models_per_group=3, seed=2)
write_corpus(test, root / "test.jsonl")
write_latents(test_latents, root / "test.latent")

# ---- calibrate (CLI: cseval calibrate) -------------------------------------
client = CompletionClient(
    MockBackend(MockOracleState(latents={**dev_latents, **test_latents}))
)
for dim in DIMENSIONS:
    config = CalibrationConfig(
        aspect=dim, fewshot_sizes=(4, 8), mc_trials=2,
        pool_size=2, refine_rounds=2, eval_subset_size=10_000,
    )
    run = calibrate(config, dev, client, seed=5)
    run.save(root / "runs" / dim.key)
    print(f"calibrated {dim.key:<15} final={run.final.id} "
          f"dev_corr={run.final.dev_corr:.3f}")
print()

# ---- score (CLI: cseval score) ---------------------------------------------
# Four evaluator kinds write score files under the same tree: the
# calibrated rubric, the zero-shot baseline, a lexical overlap metric,
# and an "external" system whose scores come from files (here: a copy of
# the human judgments, so it should rank perfectly).
score_args = ["score", "--corpus", str(root / "test.jsonl"),
              "--out", str(root / "scores"), "--seed", "5"]
main(score_args + ["--evaluator", f"cot:{root / 'runs'}"])
main(score_args + ["--evaluator", "zero-shot"])
main(score_args + ["--evaluator", "lexical:rouge1"])

external = root / "human-copy"
external.mkdir(parents=True, exist_ok=True)
for dim in DIMENSIONS:
    lines = sorted(f"{s.id}\t{float(s.judgment.score(dim))!r}" for s in test)
    (external / f"{dim.key}.tsv").write_text("\n".join(lines) + "\n")
main(score_args + ["--evaluator", f"external:{external}", "--id", "oracle"])
print()

# ---- reports (CLI: cseval benchmark / trials / rank) ------------------------
# Benchmark: per-dimension sample-level correlation with the humans, with
# a delta row comparing the calibrated evaluator against the best other.
print("benchmark report:")
main(["benchmark", "--corpus", str(root / "test.jsonl"),
      "--scores", str(root / "scores"), "--out", str(root / "benchmark.tsv")])
print()

# Trials: the same correlation re-estimated over seeded group-preserving
# subsamples, reporting mean and spread per evaluator and dimension.
print("subsample-trials report:")
main(["trials", "--corpus", str(root / "test.jsonl"),
      "--scores", str(root / "scores"), "--out", str(root / "trials.tsv"),
      "--sizes", "30,60", "--seeds", "1,2,3"])
print()

# Rank: how faithfully each evaluator reproduces the human ordering of
# the three systems inside every group (NDCG over unified scores). The
# lexical row is skipped: overlap scores do not live on judgment scales.
print("system-ranking report:")
main(["rank", "--corpus", str(root / "test.jsonl"),
      "--scores", str(root / "scores"), "--out", str(root / "rank.tsv")])

print()
print(f"reports and score files left under {root} for inspection")
