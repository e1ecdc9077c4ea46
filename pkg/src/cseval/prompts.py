"""Prompt rendering and response parsing.

Three templates cover the rubric lifecycle: `draft.txt` asks the model to
propose evaluation steps from scored exemplars, `score.txt` applies a
rubric to one (hate speech, counterspeech) pair, and `refine.txt` asks for
a full replacement of the steps given misaligned exemplars. A fourth,
`zero_shot.txt`, scores without any steps. Templates are plain text files
with {slot} placeholders and can be overridden per call via template_dir;
rendering fails loudly on unfilled slots.

Responses come back as free text. `parse_score` takes the LAST
"Score: <int>" occurrence (models often restate the scale early in their
reasoning) and bounds-checks it against the dimension scale. `parse_cot`
accepts numbered or bulleted lists and ignores surrounding chatter.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import (
    AGGRESSIVENESS,
    COHERENCE,
    RELEVANCE,
    SUITABLENESS,
    Dimension,
    Sample,
    dimension,
)

INSTRUCTION = (
    "You will be given one counterspeech (also called counterspeech or "
    "counter-narrative) written for a hateful statement (hate speech). Your "
    "task is to rate the counterspeech on one metric. Please make sure you "
    "read and understand these instructions carefully."
)

DIMENSION_DEFINITIONS: dict[str, str] = {
    RELEVANCE.key: (
        "Relevance (1-5): This metric assesses whether the counterspeech is "
        "in line with the central theme, subject, or topic of the hate "
        "speech. A relevant counterspeech directly addresses the claims made "
        "in the hateful statement instead of drifting to unrelated matters, "
        "with higher scores indicating a tighter topical fit."
    ),
    COHERENCE.key: (
        "Coherence (1-5): This metric measures whether the counterspeech "
        "provides specific, consistent, and evidence-based arguments against "
        "the hate speech. A coherent counterspeech has a clear logical flow "
        "from premise to conclusion, with higher scores indicating stronger "
        "and better organized argumentation."
    ),
    AGGRESSIVENESS.key: (
        "Aggressiveness (1-5): This metric assesses the degree of "
        "confrontational or inflammatory content in the counterspeech. It "
        "considers factors such as abusive language, intensity of "
        "disagreement, tone, engagement style, and the presence of personal "
        "attacks, with higher scores indicating greater aggression."
    ),
    SUITABLENESS.key: (
        "Suitableness (1-3): This metric measures whether the counterspeech "
        "could be used directly in a real setting without further editing. "
        "It considers the overall stance, fluency, and the likely impact on "
        "listeners, with higher scores indicating counterspeech that is "
        "ready to post as-is."
    ),
}

# Markers the deterministic mock backend routes on; each appears in exactly
# one template.
DRAFT_MARKER = "write the evaluation steps"
SCORE_MARKER = "Follow the evaluation steps"
ZERO_SHOT_MARKER = "Rate the counterspeech for"
REFINE_MARKER = "Revise the evaluation steps"
EXEMPLAR_SCORE_LABEL = "Expert score:"
PREDICTED_SCORE_LABEL = "Predicted score:"
SAMPLE_REF_LABEL = "Sample:"

_SCORE_RE = re.compile(r"score:\s*(-?\d+)", re.IGNORECASE)
_STEP_RE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+(.+?)\s*$")
_TEMPLATE_NAMES = ("draft", "score", "zero_shot", "refine")


class PromptError(ValueError):
    pass


class ScoreParseError(PromptError):
    """No usable score marker in the reply."""


class ScoreOutOfScaleError(ScoreParseError):
    """A score marker was found but the integer is outside the scale."""


class CotParseError(PromptError):
    """No numbered or bulleted steps in the reply."""


@dataclass
class CotCandidate:
    """A chain-of-thought rubric: ordered evaluation steps for one dimension.

    generation 0 marks drafts; refined children carry generation
    parent.generation + 1 and a parent_id. dev_corr holds the full-dev-set
    sample-level correlation once evaluated; screen_corr holds the
    screening-subset value when two-stage evaluation is in play.
    """

    id: str
    aspect: Dimension
    steps: list[str]
    generation: int = 0
    parent_id: str | None = None
    fewshot_size: int = 0
    dev_corr: float | None = None
    screen_corr: float | None = None

    def __post_init__(self) -> None:
        if not self.steps or any(not s.strip() for s in self.steps):
            raise PromptError(f"candidate {self.id!r}: steps must be non-empty")
        if self.generation < 0:
            raise PromptError(f"candidate {self.id!r}: negative generation")

    def steps_text(self) -> str:
        return "\n".join(f"{i}. {step}" for i, step in enumerate(self.steps, start=1))

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "aspect": self.aspect.key,
            "steps": list(self.steps),
            "generation": self.generation,
            "parent_id": self.parent_id,
            "fewshot_size": self.fewshot_size,
            "dev_corr": self.dev_corr,
            "screen_corr": self.screen_corr,
        }

    @classmethod
    def from_record(cls, record: dict) -> "CotCandidate":
        return cls(
            id=record["id"],
            aspect=dimension(record["aspect"]),
            steps=list(record["steps"]),
            generation=record.get("generation", 0),
            parent_id=record.get("parent_id"),
            fewshot_size=record.get("fewshot_size", 0),
            dev_corr=record.get("dev_corr"),
            screen_corr=record.get("screen_corr"),
        )


@dataclass
class Exemplar:
    """A dev sample paired with its human score for the aspect in play."""

    sample: Sample
    human_score: int


class _StrictSlots(dict):
    def __missing__(self, key: str) -> str:
        raise PromptError(f"template slot {{{key}}} was not filled")


def _load_template(name: str, template_dir: str | Path | None) -> str:
    if name not in _TEMPLATE_NAMES:
        raise PromptError(f"unknown template {name!r}")
    if template_dir is not None:
        path = Path(template_dir) / f"{name}.txt"
        if not path.is_file():
            raise PromptError(f"template file not found: {path}")
        return path.read_text(encoding="utf-8")
    return (
        resources.files("cseval.templates").joinpath(f"{name}.txt").read_text("utf-8")
    )


def _render(name: str, template_dir: str | Path | None, **slots: str) -> str:
    template = _load_template(name, template_dir)
    try:
        return template.format_map(_StrictSlots(slots))
    except (ValueError, IndexError) as exc:
        raise PromptError(f"malformed template {name!r}: {exc}") from None


def _common_slots(aspect: Dimension) -> dict[str, str]:
    return {
        "instruction": INSTRUCTION,
        "definition": DIMENSION_DEFINITIONS[aspect.key],
        "aspect": aspect.key,
        "lo": str(aspect.scale_min),
        "hi": str(aspect.scale_max),
    }


def _sample_ref(sample_id: str | None) -> str:
    if sample_id is None:
        return ""
    return f"\n{SAMPLE_REF_LABEL} {sample_id}\n"


def render_draft(
    aspect: Dimension,
    exemplars: list[Exemplar],
    template_dir: str | Path | None = None,
) -> str:
    """Prompt asking for fresh evaluation steps from scored exemplars."""
    if not exemplars:
        raise PromptError("at least one exemplar is required")
    blocks = []
    for ex in exemplars:
        if not aspect.in_scale(ex.human_score):
            raise PromptError(
                f"exemplar {ex.sample.id}: score {ex.human_score} outside "
                f"({aspect.scale_min},{aspect.scale_max})"
            )
        blocks.append(
            f"Hate Speech: {ex.sample.hate_speech}\n"
            f"Counterspeech: {ex.sample.counterspeech}\n"
            f"{EXEMPLAR_SCORE_LABEL} {ex.human_score}\n"
        )
    return _render(
        "draft", template_dir, exemplars="\n".join(blocks), **_common_slots(aspect)
    )


def render_score(
    aspect: Dimension,
    cot: CotCandidate,
    hate_speech: str,
    counterspeech: str,
    sample_id: str | None = None,
    template_dir: str | Path | None = None,
) -> str:
    """Prompt applying a rubric to one pair; ends with the Score directive."""
    if cot.aspect != aspect:
        raise PromptError(
            f"candidate {cot.id!r} is for {cot.aspect.key}, not {aspect.key}"
        )
    return _render(
        "score",
        template_dir,
        cot=cot.steps_text(),
        hate_speech=hate_speech,
        counterspeech=counterspeech,
        sample_ref=_sample_ref(sample_id),
        **_common_slots(aspect),
    )


def render_zero_shot(
    aspect: Dimension,
    hate_speech: str,
    counterspeech: str,
    sample_id: str | None = None,
    template_dir: str | Path | None = None,
) -> str:
    """Score prompt with no evaluation steps (direct-rating baseline)."""
    return _render(
        "zero_shot",
        template_dir,
        hate_speech=hate_speech,
        counterspeech=counterspeech,
        sample_ref=_sample_ref(sample_id),
        **_common_slots(aspect),
    )


def render_refine(
    aspect: Dimension,
    cot: CotCandidate,
    misaligned: list[tuple[Exemplar, int]],
    template_dir: str | Path | None = None,
) -> str:
    """Prompt asking for a full replacement of the steps.

    `misaligned` pairs each exemplar with the score the rubric predicted;
    the expert score comes from the exemplar itself.
    """
    if cot.aspect != aspect:
        raise PromptError(
            f"candidate {cot.id!r} is for {cot.aspect.key}, not {aspect.key}"
        )
    if not misaligned:
        raise PromptError("at least one misaligned exemplar is required")
    blocks = []
    for ex, predicted in misaligned:
        blocks.append(
            f"Hate Speech: {ex.sample.hate_speech}\n"
            f"Counterspeech: {ex.sample.counterspeech}\n"
            f"{PREDICTED_SCORE_LABEL} {predicted}\n"
            f"{EXEMPLAR_SCORE_LABEL} {ex.human_score}\n"
        )
    return _render(
        "refine",
        template_dir,
        cot=cot.steps_text(),
        misaligned="\n".join(blocks),
        **_common_slots(aspect),
    )


def parse_score(text: str, aspect: Dimension) -> int:
    """Extract the final integer score; the last marker wins."""
    matches = _SCORE_RE.findall(text)
    if not matches:
        raise ScoreParseError(
            f"no 'Score: <n>' marker in reply: {text[:80]!r}"
        )
    value = int(matches[-1])
    if not aspect.in_scale(value):
        raise ScoreOutOfScaleError(
            f"score {value} outside ({aspect.scale_min},{aspect.scale_max})"
        )
    return value


def parse_cot(
    text: str,
    aspect: Dimension,
    candidate_id: str,
    generation: int = 0,
    parent_id: str | None = None,
    fewshot_size: int = 0,
) -> CotCandidate:
    """Extract numbered or bulleted steps into a CotCandidate.

    Leading and trailing non-list chatter is ignored; a reply without any
    list lines raises CotParseError.
    """
    steps = []
    for line in text.splitlines():
        m = _STEP_RE.match(line)
        if m:
            steps.append(m.group(1))
    if not steps:
        raise CotParseError(f"no numbered steps in reply: {text[:80]!r}")
    return CotCandidate(
        id=candidate_id,
        aspect=aspect,
        steps=steps,
        generation=generation,
        parent_id=parent_id,
        fewshot_size=fewshot_size,
    )
