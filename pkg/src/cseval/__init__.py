"""Counterspeech quality evaluation.

Calibrated chain-of-thought rubrics score counterspeech on relevance,
aggressiveness, coherence, and suitableness through any text-completion
backend; from-scratch lexical baselines (BLEU, ROUGE, METEOR-lite) and a
meta-evaluation harness (sample-level rank correlations, Krippendorff's
alpha, unified quality score, NDCG system ranking, repeated-subsampling
stability) measure how well each evaluator tracks human judgment.
"""

__version__ = "0.1.0"

from .corpus import (
    AGGRESSIVENESS,
    COHERENCE,
    DIMENSIONS,
    RELEVANCE,
    SUITABLENESS,
    Corpus,
    CorpusError,
    Dimension,
    Judgment,
    Sample,
    dimension,
    load_corpus,
    sample_validation,
    split_corpus,
    synth_fixture,
    write_corpus,
)
from .metrics import (
    METRIC_IDS,
    MetricScore,
    bleu,
    compute_metric,
    meteor_lite,
    rouge,
    score_corpus,
    tokenize,
)
from .stats import (
    SampleGroup,
    StatsError,
    TrialSpec,
    build_groups,
    kendall_tau,
    krippendorff_alpha,
    ndcg,
    normalize,
    sample_level_corr,
    spearman,
    trial_protocol,
    unified_score,
)
from .prompts import (
    CotCandidate,
    Exemplar,
    PromptError,
    parse_cot,
    parse_score,
    render_draft,
    render_refine,
    render_score,
    render_zero_shot,
)
from .provider import (
    CompletionClient,
    MockBackend,
    MockOracleState,
    ProviderError,
    ProviderRequest,
    ProviderResponse,
    RemoteBackend,
    ResponseCache,
    RetryPolicy,
)
from .calibrate import (
    CalibrationConfig,
    CalibrationError,
    CalibrationRun,
    calibrate,
    draft_candidates,
    evaluate_candidate,
    refine_candidate,
    select_top_k,
)
from .scorer import (
    EvaluatorSpec,
    ScoringAborted,
    ScoringError,
    lexical_scores,
    read_scores,
    score_corpus_llm,
    score_sample,
    unified_rank,
    write_scores,
)

__all__ = [name for name in dir() if not name.startswith("_")]
