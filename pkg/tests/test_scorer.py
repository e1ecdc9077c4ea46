import math

import pytest

from cseval.calibrate import CalibrationConfig, CalibrationRun, calibrate
from cseval.corpus import (
    AGGRESSIVENESS,
    DIMENSIONS,
    RELEVANCE,
    Corpus,
    round_half_up,
    synth_fixture,
)
from cseval.prompts import CotCandidate, ScoreParseError
from cseval.provider import ProviderResponse
from cseval.scorer import (
    EvaluatorSpec,
    ScoringAborted,
    ScoringError,
    human_unified,
    lexical_scores,
    load_external_scores,
    read_score_tree,
    read_scores,
    score_corpus_llm,
    score_sample,
    unified_from_table,
    unified_rank,
    write_score_tree,
    write_scores,
)
from cseval.stats import unified_score

from conftest import make_mock_client, make_sample, tiny_corpus  # noqa: F401
from oracles import oracle_unified


def _perfect_cots():
    return {
        d.key: CotCandidate(
            id=f"{d.key[:3]}-perfect", aspect=d,
            steps=["Compare.", "Answer. [quality=1.0000]"],
        )
        for d in DIMENSIONS
    }


# ---------------------------------------------------------------------------
# evaluator specs
# ---------------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(ScoringError, match="unknown evaluator kind"):
        EvaluatorSpec(evaluator_id="x", kind="magic")
    with pytest.raises(ScoringError, match="metric_id"):
        EvaluatorSpec(evaluator_id="x", kind="lexical", metric_id="nope")
    with pytest.raises(ScoringError, match="needs a path"):
        EvaluatorSpec(evaluator_id="x", kind="external")
    with pytest.raises(ScoringError, match="non-empty"):
        EvaluatorSpec(evaluator_id="", kind="zero_shot")


def test_spec_from_string_simple_kinds(tmp_path):
    zs = EvaluatorSpec.from_string("zero-shot")
    assert (zs.evaluator_id, zs.kind) == ("zero-shot", "zero_shot")
    lex = EvaluatorSpec.from_string("lexical:rouge1")
    assert (lex.kind, lex.metric_id, lex.evaluator_id) == ("lexical", "rouge1", "rouge1")
    ext = EvaluatorSpec.from_string(f"external:{tmp_path / 'sysA'}")
    assert ext.kind == "external"
    assert ext.evaluator_id == "external-sysA"
    assert ext.scale is None
    for bad in ("wat", "cot:", "bogus:x", "lexical:nope"):
        with pytest.raises(ScoringError):
            EvaluatorSpec.from_string(bad)


def test_spec_from_string_loads_calibration_tree(tmp_path):
    dev, latents = synth_fixture(8, 2, seed=3)
    client = make_mock_client(latents)
    for aspect in (RELEVANCE, AGGRESSIVENESS):
        cfg = CalibrationConfig(
            aspect=aspect, fewshot_sizes=(2,), mc_trials=1, pool_size=1,
            refine_rounds=0, eval_subset_size=10_000,
        )
        calibrate(cfg, dev, client, seed=1).save(tmp_path / "runs" / aspect.key)

    spec = EvaluatorSpec.from_string(f"cot:{tmp_path / 'runs'}")
    assert spec.kind == "calibrated_cot"
    assert spec.evaluator_id == "cot-runs"
    assert set(spec.cots) == {"relevance", "aggressiveness"}
    assert [d.key for d in spec.dimensions_covered()] == ["relevance", "aggressiveness"]
    assert spec.cots["relevance"].steps

    with pytest.raises(ScoringError, match="no calibration runs"):
        EvaluatorSpec.from_string(f"cot:{tmp_path / 'empty'}")


def test_dimensions_covered_full_for_non_cot():
    spec = EvaluatorSpec.from_string("zero-shot")
    assert spec.dimensions_covered() == list(DIMENSIONS)


# ---------------------------------------------------------------------------
# backend scoring
# ---------------------------------------------------------------------------


def test_score_sample_cot_and_zero_shot(tiny_corpus):
    latents = {s.id: {"relevance": float(s.judgment.relevance)} for s in tiny_corpus}
    client = make_mock_client(latents, noise_floor=0.0)
    cot_spec = EvaluatorSpec(
        evaluator_id="c", kind="calibrated_cot", cots=_perfect_cots()
    )
    sample = tiny_corpus.by_id("a-m2")
    assert score_sample(cot_spec, sample, RELEVANCE, client, seed=1) == 5

    zs = EvaluatorSpec.from_string("zero-shot")
    score = score_sample(zs, sample, RELEVANCE, client, seed=1)
    assert 1 <= score <= 5


def test_score_sample_rejects_wrong_kinds(tiny_corpus):
    sample = tiny_corpus.samples[0]
    client = make_mock_client({})
    lex = EvaluatorSpec.from_string("lexical:bleu4")
    with pytest.raises(ScoringError, match="do not use a backend"):
        score_sample(lex, sample, RELEVANCE, client, seed=1)
    partial = EvaluatorSpec(
        evaluator_id="c", kind="calibrated_cot",
        cots={"relevance": _perfect_cots()["relevance"]},
    )
    with pytest.raises(ScoringError, match="no rubric for coherence"):
        score_sample(partial, sample, DIMENSIONS[2], client, seed=1)


def test_score_sample_reasks_once_at_temperature_zero(tiny_corpus):
    latents = {s.id: {"relevance": float(s.judgment.relevance)} for s in tiny_corpus}
    real = make_mock_client(latents)

    class FlakyOnce:
        def __init__(self):
            self.requests = []

        def complete(self, request):
            self.requests.append(request)
            if len(self.requests) == 1:
                return ProviderResponse(text="let me think about it")
            return real.complete(request)

    client = FlakyOnce()
    spec = EvaluatorSpec(evaluator_id="c", kind="calibrated_cot", cots=_perfect_cots())
    score = score_sample(
        spec, tiny_corpus.samples[0], RELEVANCE, client, seed=1, temperature=0.3
    )
    assert 1 <= score <= 5
    first, second = client.requests
    assert first.prompt == second.prompt
    assert first.temperature == 0.3
    assert second.temperature == 0.0
    assert first.seed != second.seed

    class AlwaysFlaky:
        def complete(self, request):
            return ProviderResponse(text="nope")

    with pytest.raises(ScoreParseError):
        score_sample(spec, tiny_corpus.samples[0], RELEVANCE, AlwaysFlaky(), seed=1)


def test_score_corpus_llm_recovers_latents(tiny_corpus):
    latents = {
        s.id: {d.key: float(s.judgment.score(d)) for d in DIMENSIONS}
        for s in tiny_corpus
    }
    client = make_mock_client(latents, noise_floor=0.0)
    spec = EvaluatorSpec(evaluator_id="c", kind="calibrated_cot", cots=_perfect_cots())
    table = score_corpus_llm(spec, tiny_corpus, list(DIMENSIONS), client, seed=1)
    assert set(table) == {d.key for d in DIMENSIONS}
    for dim in DIMENSIONS:
        for sample in tiny_corpus:
            truth = float(round_half_up(latents[sample.id][dim.key]))
            assert table[dim.key][sample.id] == truth
            assert isinstance(table[dim.key][sample.id], float)


def test_score_corpus_llm_aborts_over_failure_threshold(tiny_corpus):
    latents = {s.id: {"relevance": float(s.judgment.relevance)} for s in tiny_corpus}
    real = make_mock_client(latents, noise_floor=0.0)

    class BrokenForCoherence:
        def complete(self, request):
            if "coherence" in request.prompt.lower():
                return ProviderResponse(text="unsure")
            return real.complete(request)

    spec = EvaluatorSpec(evaluator_id="c", kind="calibrated_cot", cots=_perfect_cots())
    aspects = [RELEVANCE, DIMENSIONS[2]]  # relevance then coherence
    with pytest.raises(ScoringAborted, match="c/coherence") as exc_info:
        score_corpus_llm(spec, tiny_corpus, aspects, BrokenForCoherence(), seed=1)
    partial = exc_info.value.partial
    assert len(partial["relevance"]) == len(tiny_corpus)
    assert partial["coherence"] == {}


def test_lexical_scores_cover_corpus(tiny_corpus):
    scores = lexical_scores(tiny_corpus, "rouge1")
    assert set(scores) == set(tiny_corpus.ids())
    assert all(0.0 <= v <= 1.0 for v in scores.values())


# ---------------------------------------------------------------------------
# score files
# ---------------------------------------------------------------------------


def test_write_read_scores_round_trip(tmp_path):
    scores = {"b": 0.1 + 0.2, "a": 4.0, "c": 1 / 3}
    path = tmp_path / "relevance.tsv"
    write_scores(scores, path)
    lines = path.read_text("utf-8").splitlines()
    assert [l.split("\t")[0] for l in lines] == ["a", "b", "c"]
    # repr round trip keeps floats bit-exact
    assert read_scores(path) == scores


@pytest.mark.parametrize(
    "content, message",
    [
        ("a\t1.0\na\t2.0\n", "duplicate id"),
        ("a 1.0\n", "expected id<TAB>value"),
        ("a\tpotato\n", "not a number"),
        ("", "no scores"),
    ],
)
def test_read_scores_rejects_malformed_files(tmp_path, content, message):
    path = tmp_path / "x.tsv"
    path.write_text(content)
    with pytest.raises(ScoringError, match=message):
        read_scores(path)


def test_read_scores_scale_check_and_blank_lines(tmp_path):
    path = tmp_path / "x.tsv"
    path.write_text("a\t2.0\n\nb\t6.0\n")
    assert read_scores(path) == {"a": 2.0, "b": 6.0}
    with pytest.raises(ScoringError, match=r"line 3.*outside scale \(1.0,5.0\)"):
        read_scores(path, scale=(1.0, 5.0))


def test_score_tree_round_trip(tmp_path):
    table = {"relevance": {"a": 3.0, "b": 5.0}, "coherence": {"a": 2.0, "b": 4.0}}
    written = write_score_tree(table, tmp_path, "my-eval")
    assert [p.name for p in written] == ["coherence.tsv", "relevance.tsv"]
    assert all(p.parent.name == "my-eval" for p in written)
    tree = read_score_tree(tmp_path)
    assert tree == {"my-eval": table}
    with pytest.raises(ScoringError, match="no score files"):
        read_score_tree(tmp_path / "void")


def test_read_score_tree_rejects_unknown_dimension_files(tmp_path):
    from cseval.corpus import CorpusError

    bad = tmp_path / "ev" / "sentiment.tsv"
    bad.parent.mkdir(parents=True)
    bad.write_text("a\t1.0\n")
    with pytest.raises(CorpusError):
        read_score_tree(tmp_path)


def test_load_external_scores_validates_judgment_scales(tmp_path):
    spec = EvaluatorSpec(evaluator_id="ext", kind="external", path=tmp_path)
    with pytest.raises(ScoringError, match="no external score files"):
        load_external_scores(spec)

    (tmp_path / "relevance.tsv").write_text("a\t4.0\n")
    (tmp_path / "suitableness.tsv").write_text("a\t3.0\n")
    table = load_external_scores(spec)
    assert table == {"relevance": {"a": 4.0}, "suitableness": {"a": 3.0}}

    # 4 is on the relevance scale but off the 1-3 suitableness scale
    (tmp_path / "suitableness.tsv").write_text("a\t4.0\n")
    with pytest.raises(ScoringError, match=r"outside scale \(1.0,3.0\)"):
        load_external_scores(spec)

    wide = EvaluatorSpec(
        evaluator_id="ext", kind="external", path=tmp_path, scale=(0.0, 10.0)
    )
    assert load_external_scores(wide)["suitableness"] == {"a": 4.0}


# ---------------------------------------------------------------------------
# unified ranking
# ---------------------------------------------------------------------------


def test_unified_from_table_needs_all_dimensions():
    table = {"relevance": {"a": 5.0}, "coherence": {"a": 5.0}}
    with pytest.raises(ScoringError, match="missing"):
        unified_from_table(table)


def test_unified_from_table_intersects_sample_ids():
    table = {
        "relevance": {"a": 5.0, "b": 3.0},
        "aggressiveness": {"a": 1.0, "b": 2.0},
        "coherence": {"a": 5.0, "b": 3.0},
        "suitableness": {"a": 3.0},  # b missing here
    }
    unified = unified_from_table(table)
    assert set(unified) == {"a"}
    assert unified["a"] == 5.0
    assert unified["a"] == oracle_unified(5.0, 1.0, 5.0, 3.0)


def test_human_unified_matches_direct_computation(tiny_corpus):
    unified = human_unified(tiny_corpus)
    for sample in tiny_corpus:
        j = sample.judgment
        assert unified[sample.id] == unified_score(
            relevance=j.relevance, aggressiveness=j.aggressiveness,
            coherence=j.coherence, suitableness=j.suitableness,
        )
    # a-m0: (1 + (6-5) + 2 + 1) / 4; a-m2: (5 + (6-1) + 4 + 5) / 4
    assert unified["a-m0"] == 1.25
    assert unified["a-m2"] == 4.75


def test_unified_rank_gold_consistent_is_one(tiny_corpus):
    gold = human_unified(tiny_corpus)
    value, groups = unified_rank(tiny_corpus, dict(gold))
    assert value == 1.0
    assert groups == 2


def test_unified_rank_penalizes_a_swapped_group(tiny_corpus):
    predicted = human_unified(tiny_corpus)
    # reverse the predicted ordering inside group g1 only
    g1 = ["a-m0", "a-m1", "a-m2"]
    flipped = dict(zip(g1, [predicted[sid] for sid in reversed(g1)]))
    predicted.update(flipped)
    value, groups = unified_rank(tiny_corpus, predicted)
    # reversed 3-system group: gains come out (0, 1, 2) in predicted order
    inv_log3 = 1 / math.log2(3)
    reversed_ndcg = (0 + inv_log3 + 2 / 2) / (2 + inv_log3 + 0)
    assert groups == 2
    assert value == pytest.approx((1.0 + reversed_ndcg) / 2, abs=1e-12)


def test_unified_rank_skips_thin_groups(tiny_corpus):
    predicted = human_unified(tiny_corpus)
    for sid in ("b-m0", "b-m1"):
        del predicted[sid]  # leaves g2 with a single rankable system
    value, groups = unified_rank(tiny_corpus, predicted)
    assert groups == 1
    assert value == 1.0
    with pytest.raises(ScoringError, match="no group"):
        unified_rank(tiny_corpus, {"a-m0": 1.0})


def test_unified_rank_accepts_explicit_gold(tiny_corpus):
    gold = {s.id: float(i) for i, s in enumerate(tiny_corpus)}
    value, groups = unified_rank(tiny_corpus, dict(gold), gold_unified=gold)
    assert value == 1.0
    assert groups == 2
