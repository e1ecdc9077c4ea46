"""Auto-calibration of chain-of-thought scoring rubrics.

The search runs in three phases per dimension:

1. Draft: for every few-shot size l in `fewshot_sizes`, sample `mc_trials`
   rubrics at temperatures drawn uniformly from `temperature_range`, each
   prompted with l scored exemplars from the dev split.
2. Screen and select: every draft is scored against (a group-preserving
   subset of) the dev split and the top `pool_size` candidates by
   sample-level correlation move on; with a subset in play the survivors
   are re-scored on the full dev split so the final comparison never mixes
   subset and full-split estimates.
3. Refine: for `refine_rounds` rounds, each current top candidate is shown
   its most misaligned exemplars (largest |predicted - human| on the
   normalized scale) and asked for a full replacement rubric; children are
   evaluated on the full dev split and join the pool, so a strong child is
   itself refined in the next round.

The final rubric is the argmax of the full-dev correlation over everything
evaluated, so it can never be worse than the best surviving draft. All
randomness derives from one seed mixed with the aspect name; reruns are
exact replays (and hit the response cache end to end).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

from .corpus import Corpus, Dimension, dimension, sample_validation
from .prompts import (
    CotCandidate,
    CotParseError,
    Exemplar,
    ScoreParseError,
    parse_cot,
    parse_score,
    render_draft,
    render_refine,
    render_score,
)
from .provider import CompletionClient, ProviderRequest
from .seeding import derive_seed, rng_for
from .stats import build_groups, sample_level_corr, StatsError

logger = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    """The search could not produce a usable rubric."""


@dataclass
class CalibrationConfig:
    """Search hyperparameters for one dimension.

    Defaults: few-shot sizes (2, 4, 8) with 5 Monte-Carlo drafts each,
    top-3 survivors, 2 refinement rounds with 3 misaligned exemplars,
    drafting temperatures U(0, 0.5), scoring at temperature 0, screening
    on a 150-sample group-preserving dev subset, and a 20% parse-failure
    budget per evaluation before a candidate is marked invalid.
    """

    aspect: Dimension
    fewshot_sizes: tuple[int, ...] = (2, 4, 8)
    mc_trials: int = 5
    pool_size: int = 3
    refine_rounds: int = 2
    misaligned_per_refine: int = 3
    corr_metric: str = "spearman"
    temperature_range: tuple[float, float] = (0.0, 0.5)
    scoring_temperature: float = 0.0
    eval_subset_size: int = 150
    parse_failure_threshold: float = 0.2
    model_id: str = "mock"
    max_tokens: int = 512

    def __post_init__(self) -> None:
        if isinstance(self.aspect, str):
            self.aspect = dimension(self.aspect)
        self.fewshot_sizes = tuple(int(x) for x in self.fewshot_sizes)
        if not self.fewshot_sizes or any(x <= 0 for x in self.fewshot_sizes):
            raise ValueError("fewshot_sizes must be positive and non-empty")
        if self.mc_trials <= 0 or self.pool_size <= 0:
            raise ValueError("mc_trials and pool_size must be positive")
        if self.refine_rounds < 0 or self.misaligned_per_refine <= 0:
            raise ValueError("invalid refinement settings")
        lo, hi = self.temperature_range
        if not 0.0 <= lo <= hi:
            raise ValueError(f"bad temperature range ({lo},{hi})")
        if not 0.0 <= self.parse_failure_threshold <= 1.0:
            raise ValueError("parse_failure_threshold must be in [0,1]")

    def to_record(self) -> dict:
        record = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Dimension):
                value = value.key
            elif isinstance(value, tuple):
                value = list(value)
            record[f.name] = value
        return record

    @classmethod
    def from_record(cls, record: dict) -> "CalibrationConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in record.items() if k in known}
        for key in ("fewshot_sizes", "temperature_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass
class EvalOutcome:
    """Result of scoring one candidate over one corpus."""

    corr: float | None
    predictions: dict[str, int]
    requested: int
    parse_failures: int
    skipped_groups: int
    valid: bool


@dataclass
class CalibrationRun:
    """Everything the search saw: every candidate, every phase, the winner."""

    config: CalibrationConfig
    seed: int
    pool: list[CotCandidate]
    history: list[dict]
    final: CotCandidate

    def save(self, run_dir: str | Path) -> None:
        run_dir = Path(run_dir)
        (run_dir / "pool").mkdir(parents=True, exist_ok=True)
        record = self.config.to_record()
        record["seed"] = self.seed
        _dump_json(record, run_dir / "config.json")
        for cand in self.pool:
            _dump_json(cand.to_record(), run_dir / "pool" / f"{cand.id}.json")
        _dump_json(self.history, run_dir / "history.json")
        _dump_json(self.final.to_record(), run_dir / "final.json")
        (run_dir / "final.cot").write_text(
            self.final.steps_text() + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, run_dir: str | Path) -> "CalibrationRun":
        run_dir = Path(run_dir)
        record = json.loads((run_dir / "config.json").read_text("utf-8"))
        seed = record.pop("seed")
        config = CalibrationConfig.from_record(record)
        pool = [
            CotCandidate.from_record(json.loads(p.read_text("utf-8")))
            for p in sorted((run_dir / "pool").glob("*.json"))
        ]
        history = json.loads((run_dir / "history.json").read_text("utf-8"))
        final = CotCandidate.from_record(
            json.loads((run_dir / "final.json").read_text("utf-8"))
        )
        return cls(config=config, seed=seed, pool=pool, history=history, final=final)


def _dump_json(obj, path: Path) -> None:
    path.write_text(
        json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )


def _complete_text(
    client: CompletionClient, cfg: CalibrationConfig, prompt: str,
    temperature: float, seed: int,
) -> str:
    request = ProviderRequest(
        prompt=prompt,
        temperature=round(float(temperature), 6),
        seed=seed,
        model_id=cfg.model_id,
        max_tokens=cfg.max_tokens,
    )
    return client.complete(request).text


def draft_candidates(
    cfg: CalibrationConfig, dev: Corpus, client: CompletionClient, seed: int
) -> list[CotCandidate]:
    """Monte-Carlo draft pass: |fewshot_sizes| x mc_trials rubrics.

    A draft whose reply cannot be parsed gets one re-ask at temperature 0;
    if that also fails the draft is logged and skipped, so the returned
    list can be shorter than the full grid.
    """
    aspect = cfg.aspect
    out: list[CotCandidate] = []
    for l in cfg.fewshot_sizes:
        if l > len(dev):
            raise CalibrationError(
                f"few-shot size {l} exceeds dev split size {len(dev)}"
            )
        for t in range(cfg.mc_trials):
            rng = rng_for(seed, aspect.key, "draft", l, t)
            lo, hi = cfg.temperature_range
            temperature = float(rng.uniform(lo, hi))
            picks = rng.choice(len(dev), size=l, replace=False)
            exemplars = [
                Exemplar(dev.samples[int(i)], dev.samples[int(i)].judgment.score(aspect))
                for i in sorted(picks)
            ]
            prompt = render_draft(aspect, exemplars)
            request_seed = derive_seed(seed, aspect.key, "draft", l, t)
            candidate_id = f"{aspect.key[:3]}-l{l}-t{t:02d}"
            text = _complete_text(client, cfg, prompt, temperature, request_seed)
            try:
                cand = parse_cot(text, aspect, candidate_id, fewshot_size=l)
            except CotParseError:
                text = _complete_text(
                    client, cfg, prompt, 0.0, derive_seed(request_seed, "reask")
                )
                try:
                    cand = parse_cot(text, aspect, candidate_id, fewshot_size=l)
                except CotParseError as exc:
                    logger.warning("dropping unparseable draft %s: %s", candidate_id, exc)
                    continue
            out.append(cand)
    return out


def _evaluate(
    cot: CotCandidate,
    corpus: Corpus,
    client: CompletionClient,
    cfg: CalibrationConfig,
    seed: int,
) -> EvalOutcome:
    predictions: dict[str, int] = {}
    failures = 0
    request_seed = derive_seed(seed, cfg.aspect.key, "score")
    for sample in corpus:
        prompt = render_score(
            cfg.aspect, cot, sample.hate_speech, sample.counterspeech,
            sample_id=sample.id,
        )
        text = _complete_text(
            client, cfg, prompt, cfg.scoring_temperature, request_seed
        )
        try:
            predictions[sample.id] = parse_score(text, cfg.aspect)
            continue
        except ScoreParseError:
            pass
        text = _complete_text(
            client, cfg, prompt, 0.0, derive_seed(request_seed, "reask")
        )
        try:
            predictions[sample.id] = parse_score(text, cfg.aspect)
        except ScoreParseError as exc:
            failures += 1
            logger.warning("parse failure for %s on %s: %s", cot.id, sample.id, exc)
    requested = len(corpus)
    if requested and failures / requested > cfg.parse_failure_threshold:
        logger.warning(
            "candidate %s invalid: %d/%d parse failures", cot.id, failures, requested
        )
        return EvalOutcome(None, predictions, requested, failures, 0, valid=False)
    groups = build_groups(corpus, predictions, cfg.aspect)
    try:
        corr, skipped = sample_level_corr(groups, cfg.corr_metric)
    except StatsError as exc:
        logger.warning("candidate %s invalid: %s", cot.id, exc)
        return EvalOutcome(None, predictions, requested, failures, len(groups), valid=False)
    return EvalOutcome(corr, predictions, requested, failures, skipped, valid=True)


def evaluate_candidate(
    cot: CotCandidate,
    corpus: Corpus,
    client: CompletionClient,
    cfg: CalibrationConfig,
    seed: int,
) -> EvalOutcome:
    """Score a candidate over a corpus and store the result in dev_corr.

    The correlation is computed on raw scales for every dimension;
    because the rubric predicts the same quantity the humans rated, this
    equals the value after flipping both sides of a lower-is-better
    dimension onto the shared higher-is-better axis.
    """
    outcome = _evaluate(cot, corpus, client, cfg, seed)
    cot.dev_corr = outcome.corr
    return outcome


def _selection_corr(cand: CotCandidate) -> float | None:
    return cand.dev_corr if cand.dev_corr is not None else cand.screen_corr


def select_top_k(pool: list[CotCandidate], k: int) -> list[CotCandidate]:
    """Best k candidates by correlation (dev_corr, else screen_corr).

    Ties break toward the lower generation, then the lexicographically
    smaller id. Candidates with no defined correlation are excluded; if
    fewer than k remain, all of them are returned with a warning.
    """
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    usable = [c for c in pool if _selection_corr(c) is not None]
    usable.sort(key=lambda c: (-_selection_corr(c), c.generation, c.id))
    if len(usable) < k:
        logger.warning("only %d usable candidates for top-%d selection", len(usable), k)
    return usable[:k]


def collect_misaligned(
    cot: CotCandidate,
    corpus: Corpus,
    predictions: dict[str, int],
    count: int,
) -> list[tuple[Exemplar, int]]:
    """The exemplars the rubric got most wrong, worst first.

    Misalignment is |predicted - human| after normalizing both onto [0, 1]
    so dimensions with different scale widths are comparable. Exactly
    aligned pairs are never returned; ties break by sample id. Fewer than
    `count` misaligned pairs yields them all with a warning.
    """
    aspect = cot.aspect
    width = aspect.scale_max - aspect.scale_min
    scored = []
    for sample in corpus:
        if sample.id not in predictions:
            continue
        predicted = predictions[sample.id]
        human = sample.judgment.score(aspect)
        error = abs(predicted - human) / width
        if error > 0:
            scored.append((error, sample.id, sample, predicted, human))
    scored.sort(key=lambda row: (-row[0], row[1]))
    if len(scored) < count:
        logger.warning(
            "only %d misaligned exemplars available for %s (wanted %d)",
            len(scored), cot.id, count,
        )
    return [
        (Exemplar(sample, human), predicted)
        for _, _, sample, predicted, human in scored[:count]
    ]


def refine_candidate(
    cot: CotCandidate,
    misaligned: list[tuple[Exemplar, int]],
    client: CompletionClient,
    cfg: CalibrationConfig,
    seed: int,
    round_index: int,
) -> CotCandidate | None:
    """Ask for a full replacement rubric; None if the reply never parses."""
    prompt = render_refine(cfg.aspect, cot, misaligned)
    request_seed = derive_seed(seed, cfg.aspect.key, "refine", cot.id, round_index)
    child_id = f"{cot.id}-r{round_index}"
    text = _complete_text(client, cfg, prompt, 0.0, request_seed)
    try:
        return parse_cot(
            text, cfg.aspect, child_id,
            generation=cot.generation + 1, parent_id=cot.id,
            fewshot_size=cot.fewshot_size,
        )
    except CotParseError:
        text = _complete_text(
            client, cfg, prompt, 0.0, derive_seed(request_seed, "reask")
        )
        try:
            return parse_cot(
                text, cfg.aspect, child_id,
                generation=cot.generation + 1, parent_id=cot.id,
                fewshot_size=cot.fewshot_size,
            )
        except CotParseError as exc:
            logger.warning("dropping unparseable refinement %s: %s", child_id, exc)
            return None


def calibrate(
    cfg: CalibrationConfig, dev: Corpus, client: CompletionClient, seed: int
) -> CalibrationRun:
    """Run the full draft / select / refine search for one dimension."""
    aspect = cfg.aspect
    drafts = draft_candidates(cfg, dev, client, seed)
    if not drafts:
        raise CalibrationError(f"{aspect.key}: no draft produced parseable steps")
    history: list[dict] = [
        {"phase": "draft", "candidates": [c.id for c in drafts]}
    ]

    if cfg.eval_subset_size < len(dev):
        screen_split = sample_validation(
            dev, cfg.eval_subset_size, derive_seed(seed, aspect.key, "screen")
        )
        two_stage = True
    else:
        screen_split = dev
        two_stage = False

    predictions: dict[str, dict[str, int]] = {}
    for cand in drafts:
        outcome = _evaluate(cand, screen_split, client, cfg, seed)
        cand.screen_corr = outcome.corr
        if not two_stage:
            cand.dev_corr = outcome.corr
            predictions[cand.id] = outcome.predictions
    history.append(
        {
            "phase": "screen",
            "subset_size": len(screen_split),
            "correlations": {c.id: c.screen_corr for c in drafts},
        }
    )

    survivors = select_top_k(drafts, cfg.pool_size)
    if not survivors:
        raise CalibrationError(f"{aspect.key}: every draft was invalid on the dev split")
    if two_stage:
        for cand in survivors:
            outcome = evaluate_candidate(cand, dev, client, cfg, seed)
            predictions[cand.id] = outcome.predictions
    history.append(
        {
            "phase": "select",
            "survivors": [c.id for c in survivors],
            "dev_correlations": {c.id: c.dev_corr for c in survivors},
        }
    )

    pool: list[CotCandidate] = list(drafts)
    for round_index in range(1, cfg.refine_rounds + 1):
        parents = select_top_k(
            [c for c in pool if c.dev_corr is not None], cfg.pool_size
        )
        refined: dict[str, str] = {}
        for parent in parents:
            misaligned = collect_misaligned(
                parent, dev, predictions.get(parent.id, {}), cfg.misaligned_per_refine
            )
            if not misaligned:
                logger.info("%s: nothing misaligned to refine on", parent.id)
                continue
            child = refine_candidate(parent, misaligned, client, cfg, seed, round_index)
            if child is None:
                continue
            outcome = evaluate_candidate(child, dev, client, cfg, seed)
            predictions[child.id] = outcome.predictions
            pool.append(child)
            refined[parent.id] = child.id
        history.append(
            {
                "phase": "refine",
                "round": round_index,
                "children": refined,
                "dev_correlations": {
                    cid: next(c.dev_corr for c in pool if c.id == cid)
                    for cid in refined.values()
                },
            }
        )

    evaluated = [c for c in pool if c.dev_corr is not None]
    if not evaluated:
        raise CalibrationError(
            f"{aspect.key}: no candidate produced a defined dev correlation"
        )
    evaluated.sort(key=lambda c: (-c.dev_corr, -c.generation, c.id))
    final = evaluated[0]
    history.append({"phase": "final", "id": final.id, "dev_corr": final.dev_corr})
    return CalibrationRun(
        config=cfg, seed=seed, pool=pool, history=history, final=final
    )
