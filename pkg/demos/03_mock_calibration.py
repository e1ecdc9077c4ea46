"""
Auto-calibrating a scoring rubric against the mock backend
==========================================================

The calibration loop drafts chain-of-thought rubrics from few-shot
exemplars, screens them by sample-level correlation with the human
judgments, and iteratively refines the best ones on their most
misaligned examples. The mock backend makes this runnable offline: each
rubric carries a hidden quality tag, and scoring noise shrinks as the
quality rises, so the loop has a real signal to climb. Run with:

    python3 demos/03_mock_calibration.py
"""

from cseval.calibrate import CalibrationConfig, calibrate
from cseval.corpus import RELEVANCE, synth_fixture
from cseval.provider import CompletionClient, MockBackend, MockOracleState

# A synthetic dev split: 40 hate-speech groups, 3 counterspeech systems
# each, with known latent quality per sample.
dev, latents = synth_fixture(n_groups=40, models_per_group=3, seed=10)
print(f"dev split: {len(dev)} samples in {len(dev.group_index)} groups")

client = CompletionClient(MockBackend(MockOracleState(latents=latents)))
config = CalibrationConfig(
    aspect=RELEVANCE,
    fewshot_sizes=(2, 4, 8),  # exemplars per draft prompt
    mc_trials=3,              # drafts per few-shot size
    pool_size=3,              # survivors per round
    refine_rounds=2,
    eval_subset_size=150,     # screen on a group-preserving subset
)
run = calibrate(config, dev, client, seed=1)

# The history records every phase. Draft correlations are modest; each
# refinement round usually pushes the frontier up.
for entry in run.history:
    phase = entry["phase"]
    if phase == "screen":
        values = [v for v in entry["correlations"].values() if v is not None]
        print(f"screen:  {len(values)} drafts, "
              f"corr {min(values):.3f} .. {max(values):.3f}")
    elif phase == "select":
        print(f"select:  survivors {', '.join(entry['survivors'])}")
    elif phase == "refine":
        for parent, child in entry["children"].items():
            corr = entry["dev_correlations"][child]
            print(f"refine {entry['round']}: {parent} -> {child} (corr {corr:.3f})")
    elif phase == "final":
        print(f"final:   {entry['id']} (corr {entry['dev_corr']:.3f})")

print()
print("winning rubric:")
print(run.final.steps_text())
print()
print(f"backend calls: {client.backend_calls} (all deterministic; "
      "rerunning with the same seed replays them exactly)")
