"""Evaluators: turning a corpus into per-sample predicted scores.

Four evaluator kinds share one interface:

* ``calibrated_cot`` — applies a calibrated rubric per dimension through a
  completion backend.
* ``zero_shot`` — direct rating through the backend, no rubric (the
  single-prompt baseline).
* ``lexical`` — one of the reference-overlap metrics; no backend involved.
* ``external`` — scores read verbatim from files, for systems evaluated
  elsewhere.

Scores travel as two-column tab-separated files, one per (evaluator,
dimension), under ``<root>/<evaluator_id>/<dimension>.tsv``; every
downstream report (benchmark, trials, rank) consumes that layout, so LLM
calls and statistics stay decoupled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .calibrate import CalibrationRun
from .corpus import DIMENSIONS, Corpus, Dimension, Sample, dimension
from .metrics import METRIC_IDS, score_corpus
from .prompts import (
    CotCandidate,
    ScoreParseError,
    parse_score,
    render_score,
    render_zero_shot,
)
from .provider import CompletionClient, ProviderRequest
from .seeding import derive_seed
from .stats import average_ranks, ndcg, unified_score

logger = logging.getLogger(__name__)


class ScoringError(RuntimeError):
    pass


class ScoringAborted(ScoringError):
    """Too many parse failures; partial results are preserved on the error."""

    def __init__(self, message: str, partial: dict[str, dict[str, float]]):
        super().__init__(message)
        self.partial = partial


@dataclass
class EvaluatorSpec:
    """What to score with. Exactly one kind; see module docstring.

    For calibrated_cot, `cots` must hold a rubric for every dimension being
    scored. For external, `path` points at a directory of per-dimension
    score files; values are validated against `scale` when set, else
    against each dimension's own judgment scale.
    """

    evaluator_id: str
    kind: str
    cots: dict[str, CotCandidate] = field(default_factory=dict)
    metric_id: str | None = None
    path: Path | None = None
    scale: tuple[float, float] | None = None

    _KINDS = ("calibrated_cot", "zero_shot", "lexical", "external")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ScoringError(
                f"unknown evaluator kind {self.kind!r}; known: {', '.join(self._KINDS)}"
            )
        if not self.evaluator_id:
            raise ScoringError("evaluator_id must be non-empty")
        if self.kind == "lexical" and self.metric_id not in METRIC_IDS:
            raise ScoringError(
                f"lexical evaluator needs a metric_id from: {', '.join(METRIC_IDS)}"
            )
        if self.kind == "external" and self.path is None:
            raise ScoringError("external evaluator needs a path")

    @classmethod
    def from_string(cls, spec: str) -> "EvaluatorSpec":
        """Parse compact CLI notation.

        ``lexical:rouge1`` | ``zero-shot`` | ``cot:<dir>`` (a calibration
        output tree with <dimension>/final.cot underneath, or per-aspect
        run dirs) | ``external:<dir>``.
        """
        if spec == "zero-shot":
            return cls(evaluator_id="zero-shot", kind="zero_shot")
        head, sep, tail = spec.partition(":")
        if not sep or not tail:
            raise ScoringError(f"cannot parse evaluator spec {spec!r}")
        if head == "lexical":
            return cls(evaluator_id=tail, kind="lexical", metric_id=tail)
        if head == "cot":
            root = Path(tail)
            cots: dict[str, CotCandidate] = {}
            for dim in DIMENSIONS:
                run_dir = root / dim.key
                if (run_dir / "final.json").is_file():
                    cots[dim.key] = CalibrationRun.load(run_dir).final
            if not cots:
                raise ScoringError(f"no calibration runs under {root}")
            return cls(evaluator_id=f"cot-{root.name}", kind="calibrated_cot", cots=cots)
        if head == "external":
            return cls(evaluator_id=f"external-{Path(tail).name}", kind="external",
                       path=Path(tail))
        raise ScoringError(f"cannot parse evaluator spec {spec!r}")

    def dimensions_covered(self) -> list[Dimension]:
        if self.kind == "calibrated_cot":
            return [d for d in DIMENSIONS if d.key in self.cots]
        return list(DIMENSIONS)


def score_sample(
    evaluator: EvaluatorSpec,
    sample: Sample,
    aspect: Dimension,
    client: CompletionClient,
    seed: int,
    *,
    temperature: float = 0.0,
    model_id: str = "mock",
    max_tokens: int = 512,
) -> int:
    """One LLM-backed score for one sample; raises ScoreParseError if the
    reply (and one temperature-0 re-ask) cannot be parsed."""
    if evaluator.kind == "calibrated_cot":
        cot = evaluator.cots.get(aspect.key)
        if cot is None:
            raise ScoringError(
                f"evaluator {evaluator.evaluator_id!r} has no rubric for {aspect.key}"
            )
        prompt = render_score(
            aspect, cot, sample.hate_speech, sample.counterspeech, sample_id=sample.id
        )
    elif evaluator.kind == "zero_shot":
        prompt = render_zero_shot(
            aspect, sample.hate_speech, sample.counterspeech, sample_id=sample.id
        )
    else:
        raise ScoringError(f"{evaluator.kind} evaluators do not use a backend")
    request_seed = derive_seed(seed, aspect.key, "score")
    text = client.complete(
        ProviderRequest(prompt, round(float(temperature), 6), request_seed,
                        model_id, max_tokens)
    ).text
    try:
        return parse_score(text, aspect)
    except ScoreParseError:
        text = client.complete(
            ProviderRequest(prompt, 0.0, derive_seed(request_seed, "reask"),
                            model_id, max_tokens)
        ).text
        return parse_score(text, aspect)


def score_corpus_llm(
    evaluator: EvaluatorSpec,
    corpus: Corpus,
    aspects: list[Dimension],
    client: CompletionClient,
    seed: int,
    *,
    temperature: float = 0.0,
    model_id: str = "mock",
    max_tokens: int = 512,
    failure_threshold: float = 0.2,
) -> dict[str, dict[str, float]]:
    """Backend-scored table: dimension key -> sample id -> score.

    Requests run in deterministic (corpus order x aspect) order. Samples
    whose reply never parses are left out and counted; if the failure rate
    for any dimension exceeds `failure_threshold`, ScoringAborted is
    raised with everything scored so far attached.
    """
    table: dict[str, dict[str, float]] = {}
    for aspect in aspects:
        scores: dict[str, float] = {}
        failures = 0
        for sample in corpus:
            try:
                scores[sample.id] = float(
                    score_sample(
                        evaluator, sample, aspect, client, seed,
                        temperature=temperature, model_id=model_id,
                        max_tokens=max_tokens,
                    )
                )
            except ScoreParseError as exc:
                failures += 1
                logger.warning(
                    "parse failure (%s/%s): %s", sample.id, aspect.key, exc
                )
        table[aspect.key] = scores
        if failures / len(corpus) > failure_threshold:
            raise ScoringAborted(
                f"{evaluator.evaluator_id}/{aspect.key}: {failures}/{len(corpus)} "
                f"replies unparseable (threshold {failure_threshold:.0%})",
                partial=table,
            )
        if failures:
            logger.warning(
                "%s/%s: %d samples missing after parse failures",
                evaluator.evaluator_id, aspect.key, failures,
            )
    return table


def lexical_scores(corpus: Corpus, metric_id: str) -> dict[str, float]:
    """Metric value per sample id (references from the corpus records)."""
    return {sid: ms.value for sid, ms in score_corpus(corpus, metric_id).items()}


# ---------------------------------------------------------------------------
# score files
# ---------------------------------------------------------------------------


def write_scores(scores: dict[str, float], path: str | Path) -> None:
    """Two-column id<TAB>value file, corpus-independent and diff-friendly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id in sorted(scores):
            value = scores[sample_id]
            fh.write(f"{sample_id}\t{value!r}\n")


def read_scores(
    path: str | Path, scale: tuple[float, float] | None = None
) -> dict[str, float]:
    """Load a two-column score file; values outside `scale` are load errors."""
    out: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ScoringError(f"{path}: line {lineno}: expected id<TAB>value")
            sample_id, raw = parts
            try:
                value = float(raw)
            except ValueError:
                raise ScoringError(
                    f"{path}: line {lineno}: {raw!r} is not a number"
                ) from None
            if sample_id in out:
                raise ScoringError(f"{path}: line {lineno}: duplicate id {sample_id!r}")
            if scale is not None and not scale[0] <= value <= scale[1]:
                raise ScoringError(
                    f"{path}: line {lineno}: value {value} outside scale "
                    f"({scale[0]},{scale[1]})"
                )
            out[sample_id] = value
    if not out:
        raise ScoringError(f"{path}: no scores")
    return out


def write_score_tree(
    table: dict[str, dict[str, float]], root: str | Path, evaluator_id: str
) -> list[Path]:
    """Write one file per dimension under <root>/<evaluator_id>/."""
    written = []
    for dim_key in sorted(table):
        path = Path(root) / evaluator_id / f"{dim_key}.tsv"
        write_scores(table[dim_key], path)
        written.append(path)
    return written


def read_score_tree(
    root: str | Path, scale_for: dict[str, tuple[float, float]] | None = None
) -> dict[str, dict[str, dict[str, float]]]:
    """Load every <root>/<evaluator>/<dimension>.tsv into a nested table."""
    root = Path(root)
    if not root.is_dir():
        raise ScoringError(f"no score files under {root}")
    out: dict[str, dict[str, dict[str, float]]] = {}
    for evaluator_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        by_dim: dict[str, dict[str, float]] = {}
        for tsv in sorted(evaluator_dir.glob("*.tsv")):
            dim_key = tsv.stem
            dimension(dim_key)  # unknown dimension file -> CorpusError
            scale = (scale_for or {}).get(dim_key)
            by_dim[dim_key] = read_scores(tsv, scale)
        if by_dim:
            out[evaluator_dir.name] = by_dim
    if not out:
        raise ScoringError(f"no score files under {root}")
    return out


def load_external_scores(spec: EvaluatorSpec) -> dict[str, dict[str, float]]:
    """Read an external evaluator's per-dimension files, validating scale."""
    assert spec.path is not None
    out: dict[str, dict[str, float]] = {}
    for tsv in sorted(Path(spec.path).glob("*.tsv")):
        dim = dimension(tsv.stem)
        scale = spec.scale or (float(dim.scale_min), float(dim.scale_max))
        out[tsv.stem] = read_scores(tsv, scale)
    if not out:
        raise ScoringError(f"no external score files under {spec.path}")
    return out


# ---------------------------------------------------------------------------
# unified ranking
# ---------------------------------------------------------------------------


def unified_from_table(
    table: dict[str, dict[str, float]],
) -> dict[str, float]:
    """Per-sample unified score from a four-dimension score table.

    Samples missing any dimension are dropped (the unified score needs all
    four components).
    """
    keys = [d.key for d in DIMENSIONS]
    missing = [k for k in keys if k not in table]
    if missing:
        raise ScoringError(f"unified score needs all dimensions; missing {missing}")
    shared = set.intersection(*(set(table[k]) for k in keys))
    return {
        sid: unified_score(
            relevance=table["relevance"][sid],
            coherence=table["coherence"][sid],
            aggressiveness=table["aggressiveness"][sid],
            suitableness=table["suitableness"][sid],
        )
        for sid in sorted(shared)
    }


def human_unified(corpus: Corpus) -> dict[str, float]:
    return {
        s.id: unified_score(
            relevance=s.judgment.relevance,
            coherence=s.judgment.coherence,
            aggressiveness=s.judgment.aggressiveness,
            suitableness=s.judgment.suitableness,
        )
        for s in corpus
    }


def unified_rank(
    corpus: Corpus,
    predicted_unified: dict[str, float],
    gold_unified: dict[str, float] | None = None,
) -> tuple[float, int]:
    """Mean per-group NDCG of predicted system ordering vs human ordering.

    Within each hate-speech group the systems are ranked by human unified
    score; a system at (fractional, 1-based) rank position p gets gold
    relevance (group size - p), so the human's best system carries the
    most gain. Groups with fewer than two systems carrying both scores are
    skipped. Returns (mean NDCG, groups used).
    """
    if gold_unified is None:
        gold_unified = human_unified(corpus)
    values: list[float] = []
    for members in corpus.groups():
        rows = [
            (predicted_unified[s.id], gold_unified[s.id])
            for s in members
            if s.id in predicted_unified and s.id in gold_unified
        ]
        if len(rows) < 2:
            continue
        predicted = [r[0] for r in rows]
        human = [r[1] for r in rows]
        # rank 1 = best human system; average_ranks ranks ascending, so
        # flip via (n+1-rank) and convert to relevance = n - position
        n = len(rows)
        positions = [n + 1 - r for r in average_ranks(human)]
        gold = [n - p for p in positions]
        values.append(ndcg(predicted, gold))
    if not values:
        raise ScoringError("no group had two or more rankable systems")
    return float(sum(values) / len(values)), len(values)
