import pytest

from cseval.corpus import Corpus, Judgment, Sample
from cseval.provider import CompletionClient, MockBackend, MockOracleState


def make_sample(
    sample_id: str,
    hate_speech: str = "Hobbyists are all dreadful. [case hs0]",
    model_id: str = "m0",
    relevance: int = 3,
    coherence: int = 3,
    aggressiveness: int = 3,
    suitableness: int = 2,
    counterspeech: str = "A hobby says nothing about character.",
    references: tuple[str, ...] = ("A hobby says nothing about character at all.",),
    **judgment_kwargs,
) -> Sample:
    return Sample(
        id=sample_id,
        hate_speech=hate_speech,
        references=list(references),
        counterspeech=counterspeech,
        model_id=model_id,
        judgment=Judgment(
            relevance=relevance,
            coherence=coherence,
            aggressiveness=aggressiveness,
            suitableness=suitableness,
            **judgment_kwargs,
        ),
    )


@pytest.fixture
def tiny_corpus() -> Corpus:
    """Two hate-speech groups, three systems each, hand-picked judgments."""
    rows = [
        # (id, group, model, rel, coh, agg, sui)
        ("a-m0", "g1", "m0", 1, 2, 5, 1),
        ("a-m1", "g1", "m1", 3, 3, 3, 2),
        ("a-m2", "g1", "m2", 5, 4, 1, 3),
        ("b-m0", "g2", "m0", 2, 1, 4, 1),
        ("b-m1", "g2", "m1", 3, 4, 2, 2),
        ("b-m2", "g2", "m2", 4, 5, 2, 3),
    ]
    samples = [
        make_sample(
            sid,
            hate_speech=f"Group text {group}. [case {group}]",
            model_id=model,
            relevance=rel,
            coherence=coh,
            aggressiveness=agg,
            suitableness=sui,
        )
        for sid, group, model, rel, coh, agg, sui in rows
    ]
    return Corpus(samples)


def make_mock_client(
    latents: dict[str, dict[str, float]],
    *,
    sigma_max: float = 2.0,
    noise_floor: float = 0.2,
    rng_seed: int = 0,
    cache=None,
) -> CompletionClient:
    state = MockOracleState(
        latents=latents, sigma_max=sigma_max, noise_floor=noise_floor, rng_seed=rng_seed
    )
    return CompletionClient(MockBackend(state), cache=cache)
