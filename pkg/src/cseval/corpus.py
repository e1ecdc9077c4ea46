"""Counterspeech corpus schema, loading, splitting, and synthetic fixtures.

A corpus is a JSON-lines file, one record per (hate speech, system output)
pair::

    {"id": "hs0003-m1",
     "hate_speech": "...",
     "references": ["...", "..."],
     "counterspeech": "...",
     "model_id": "m1",
     "judgment": {"relevance": 4, "coherence": 5, "aggressiveness": 2,
                  "suitableness": 3,
                  "annotator_count": 3,
                  "raw_ratings": {"relevance": [4, 4, 5], ...}}}

`annotator_count` and `raw_ratings` are optional; when raw ratings are
present the consensus fields must equal the round-half-up mean of the raw
values per dimension. Unknown fields are preserved on round-trip but never
interpreted. All records that share the same hate-speech text form one
group; group structure drives sample-level correlation and group-preserving
subsampling, so loaders never split a group.

The synthetic fixture generator builds corpora with a known ground truth:
each sample gets a latent true score per dimension, model-level latent
means are ordered by model index, and the latents are written to a sidecar
file so tests (and the deterministic mock backend) can read back the truth
that produced the visible Likert judgments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .seeding import rng_for


class CorpusError(ValueError):
    """Malformed corpus file or record."""


class Dimension:
    """One evaluation dimension with its integer scale and polarity."""

    __slots__ = ("key", "scale_min", "scale_max", "higher_better")

    def __init__(self, key: str, scale_min: int, scale_max: int, higher_better: bool):
        self.key = key
        self.scale_min = scale_min
        self.scale_max = scale_max
        self.higher_better = higher_better

    def __repr__(self) -> str:
        return f"Dimension({self.key!r}, {self.scale_min}, {self.scale_max})"

    def __hash__(self) -> int:
        return hash(self.key)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Dimension) and other.key == self.key

    def clamp(self, value: float) -> float:
        return min(self.scale_max, max(self.scale_min, value))

    def in_scale(self, value: float) -> bool:
        return self.scale_min <= value <= self.scale_max

    def orient(self, value: float) -> float:
        """Map a raw score onto a higher-is-better axis."""
        if self.higher_better:
            return value
        return (self.scale_min + self.scale_max) - value


RELEVANCE = Dimension("relevance", 1, 5, True)
COHERENCE = Dimension("coherence", 1, 5, True)
AGGRESSIVENESS = Dimension("aggressiveness", 1, 5, False)
SUITABLENESS = Dimension("suitableness", 1, 3, True)

DIMENSIONS: tuple[Dimension, ...] = (RELEVANCE, AGGRESSIVENESS, COHERENCE, SUITABLENESS)
DIMENSION_BY_KEY = {d.key: d for d in DIMENSIONS}


def dimension(key: str) -> Dimension:
    try:
        return DIMENSION_BY_KEY[key]
    except KeyError:
        raise CorpusError(f"unknown dimension {key!r}") from None


def round_half_up(x: float) -> int:
    """Round with .5 going up (3.5 -> 4), unlike banker's rounding."""
    return int(math.floor(x + 0.5))


@dataclass
class Judgment:
    """Consensus human ratings for one sample, one value per dimension."""

    relevance: int
    coherence: int
    aggressiveness: int
    suitableness: int
    annotator_count: int | None = None
    raw_ratings: dict[str, list[int]] | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for dim in DIMENSIONS:
            value = self.score(dim)
            if not isinstance(value, int) or isinstance(value, bool):
                raise CorpusError(f"{dim.key} score must be an integer, got {value!r}")
            if not dim.in_scale(value):
                raise CorpusError(
                    f"{dim.key} score {value} out of scale ({dim.scale_min},{dim.scale_max})"
                )
        if self.raw_ratings is not None:
            for key, values in self.raw_ratings.items():
                dim = dimension(key)
                if not values:
                    raise CorpusError(f"empty raw ratings for {key}")
                for v in values:
                    if not dim.in_scale(v):
                        raise CorpusError(
                            f"raw {key} rating {v} out of scale ({dim.scale_min},{dim.scale_max})"
                        )
                consensus = round_half_up(sum(values) / len(values))
                if consensus != self.score(dim):
                    raise CorpusError(
                        f"{key} consensus {self.score(dim)} does not equal the "
                        f"rounded mean of raw ratings ({consensus})"
                    )

    def score(self, dim: Dimension) -> int:
        return getattr(self, dim.key)


@dataclass
class Sample:
    """One system output for one hate-speech prompt, plus its human judgment."""

    id: str
    hate_speech: str
    references: list[str]
    counterspeech: str
    model_id: str
    judgment: Judgment
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("sample id must be non-empty")
        if not self.hate_speech:
            raise CorpusError(f"sample {self.id}: hate_speech must be non-empty")
        if not self.references:
            raise CorpusError(f"sample {self.id}: at least one reference is required")
        if not self.counterspeech:
            raise CorpusError(f"sample {self.id}: counterspeech must be non-empty")


@dataclass
class Corpus:
    """An ordered collection of samples with a hate-speech group index.

    Treated as immutable after construction; the group index maps each
    distinct hate-speech text to the indices of its samples, in file order.
    """

    samples: list[Sample]
    group_index: dict[str, list[int]] = field(init=False, repr=False)
    _by_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        by_id: dict[str, int] = {}
        groups: dict[str, list[int]] = {}
        for i, sample in enumerate(self.samples):
            if sample.id in by_id:
                raise CorpusError(f"duplicate sample id {sample.id!r}")
            by_id[sample.id] = i
            groups.setdefault(sample.hate_speech, []).append(i)
        self.group_index = groups
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Corpus) and other.samples == self.samples

    def by_id(self, sample_id: str) -> Sample:
        try:
            return self.samples[self._by_id[sample_id]]
        except KeyError:
            raise CorpusError(f"no sample with id {sample_id!r}") from None

    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def groups(self) -> list[list[Sample]]:
        return [[self.samples[i] for i in idx] for idx in self.group_index.values()]

    def model_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.samples:
            seen.setdefault(s.model_id, None)
        return list(seen)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_JUDGMENT_KEYS = ("relevance", "coherence", "aggressiveness", "suitableness")


def _judgment_from_record(obj: dict) -> Judgment:
    if not isinstance(obj, dict):
        raise CorpusError("judgment must be an object")
    known = set(_JUDGMENT_KEYS) | {"annotator_count", "raw_ratings"}
    extra = {k: v for k, v in obj.items() if k not in known}
    try:
        fields = {k: obj[k] for k in _JUDGMENT_KEYS}
    except KeyError as exc:
        raise CorpusError(f"judgment missing field {exc.args[0]!r}") from None
    return Judgment(
        **fields,
        annotator_count=obj.get("annotator_count"),
        raw_ratings=obj.get("raw_ratings"),
        extra=extra,
    )


def _sample_from_record(obj: dict) -> Sample:
    if not isinstance(obj, dict):
        raise CorpusError("record must be a JSON object")
    known = {"id", "hate_speech", "references", "counterspeech", "model_id", "judgment"}
    missing = known - set(obj)
    if missing:
        raise CorpusError(f"record missing field(s) {sorted(missing)}")
    refs = obj["references"]
    if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
        raise CorpusError("references must be a list of strings")
    return Sample(
        id=obj["id"],
        hate_speech=obj["hate_speech"],
        references=list(refs),
        counterspeech=obj["counterspeech"],
        model_id=obj["model_id"],
        judgment=_judgment_from_record(obj["judgment"]),
        extra={k: v for k, v in obj.items() if k not in known},
    )


def _sample_to_record(sample: Sample) -> dict:
    j = sample.judgment
    judgment: dict = {k: getattr(j, k) for k in _JUDGMENT_KEYS}
    if j.annotator_count is not None:
        judgment["annotator_count"] = j.annotator_count
    if j.raw_ratings is not None:
        judgment["raw_ratings"] = {k: list(v) for k, v in sorted(j.raw_ratings.items())}
    judgment.update(sorted(j.extra.items()))
    record = {
        "id": sample.id,
        "hate_speech": sample.hate_speech,
        "references": list(sample.references),
        "counterspeech": sample.counterspeech,
        "model_id": sample.model_id,
        "judgment": judgment,
    }
    record.update(sorted(sample.extra.items()))
    return record


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a JSON-lines corpus.

    Raises CorpusError with the 1-based line number for malformed lines,
    out-of-scale judgments, or duplicate ids.
    """
    samples: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
            try:
                samples.append(_sample_from_record(obj))
            except CorpusError as exc:
                raise CorpusError(f"{path}: line {lineno}: {exc}") from None
    if not samples:
        raise CorpusError(f"{path}: corpus is empty")
    return Corpus(samples)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as JSON lines; load(write(c)) == c."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample in corpus:
            fh.write(json.dumps(_sample_to_record(sample), ensure_ascii=False))
            fh.write("\n")


def latents_path(corpus_path: str | Path) -> Path:
    """Sidecar path for a corpus file: same base name, `.latent` suffix."""
    return Path(corpus_path).with_suffix(".latent")


def write_latents(latents: dict[str, dict[str, float]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(latents, fh, ensure_ascii=False, sort_keys=True, indent=1)
        fh.write("\n")


def load_latents(path: str | Path) -> dict[str, dict[str, float]]:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise CorpusError(f"{path}: latent sidecar must be a JSON object")
    return obj


# ---------------------------------------------------------------------------
# sampling and splitting
# ---------------------------------------------------------------------------


def sample_validation(corpus: Corpus, n: int, seed: int) -> Corpus:
    """Draw a deterministic group-preserving subset of about n samples.

    Whole hate-speech groups are drawn in seeded-shuffled order until at
    least n samples are collected. If the overshoot exceeds 10% of n, the
    smallest drawn group that fits inside the overshoot is dropped (latest
    drawn wins ties), so the result stays >= n. Original sample order is
    preserved.
    """
    if n <= 0:
        raise CorpusError(f"subset size must be positive, got {n}")
    if n > len(corpus):
        raise CorpusError(f"subset size {n} exceeds corpus size {len(corpus)}")
    groups = list(corpus.group_index.values())
    rng = rng_for(seed, "sample_validation", n)
    order = rng.permutation(len(groups))
    chosen: list[int] = []
    total = 0
    for gi in order:
        chosen.append(int(gi))
        total += len(groups[gi])
        if total >= n:
            break
    overshoot = total - n
    if overshoot > 0.1 * n:
        droppable = [gi for gi in chosen if len(groups[gi]) <= overshoot]
        if droppable:
            victim = min(
                droppable, key=lambda gi: (len(groups[gi]), -chosen.index(gi))
            )
            chosen.remove(victim)
    indices = sorted(i for gi in chosen for i in groups[gi])
    return Corpus([corpus.samples[i] for i in indices])


def split_corpus(
    corpus: Corpus, test_fraction: float, seed: int
) -> tuple[Corpus, Corpus]:
    """Group-preserving (dev, test) split with disjoint sample ids."""
    if not 0.0 < test_fraction < 1.0:
        raise CorpusError(f"test_fraction must be in (0, 1), got {test_fraction}")
    groups = list(corpus.group_index.values())
    if len(groups) < 2:
        raise CorpusError("need at least two groups to split")
    rng = rng_for(seed, "split", test_fraction)
    order = rng.permutation(len(groups))
    target = test_fraction * len(corpus)
    test_groups: set[int] = set()
    total = 0
    for gi in order:
        if total >= target:
            break
        test_groups.add(int(gi))
        total += len(groups[gi])
    if len(test_groups) == len(groups):
        # keep at least one group on the dev side
        test_groups.discard(int(order[-1]))
    test_idx = sorted(i for gi in test_groups for i in groups[gi])
    dev_idx = sorted(
        i for gi in range(len(groups)) if gi not in test_groups for i in groups[gi]
    )
    return Corpus([corpus.samples[i] for i in dev_idx]), Corpus(
        [corpus.samples[i] for i in test_idx]
    )


def human_scores(corpus: Corpus, dim: Dimension) -> dict[str, int]:
    """Consensus human score per sample id for one dimension."""
    return {s.id: s.judgment.score(dim) for s in corpus}


# ---------------------------------------------------------------------------
# synthetic fixtures
# ---------------------------------------------------------------------------

_TOPICS = (
    "gardening", "chess", "astronomy", "cycling", "poetry", "baking",
    "birdwatching", "pottery", "jogging", "photography", "calligraphy",
    "fishing", "knitting", "surfing", "archery", "painting", "camping",
    "dancing", "juggling", "beekeeping", "origami", "skating", "rowing",
    "woodworking", "stargazing", "climbing", "quilting", "drumming",
    "foraging", "puzzling", "kayaking", "sculpting", "brewing", "sketching",
    "curling", "fencing", "bowling", "weaving", "whittling", "botany",
)

_TRAITS = (
    "dishonest", "lazy", "selfish", "foolish", "unreliable", "arrogant",
    "careless", "greedy", "rude", "cowardly", "boring", "incompetent",
)

_HS_TEMPLATES = (
    "People who enjoy {topic} are {trait} and should not be trusted.",
    "Everyone into {topic} is {trait}; keep them out of our community.",
    "Anyone who spends time on {topic} is obviously {trait}.",
    "Fans of {topic} are all {trait} and bring nothing to society.",
    "You can tell someone is {trait} just because they like {topic}.",
    "Nobody who practices {topic} deserves respect; they are {trait}.",
)

_REF_TEMPLATES = (
    "Enjoying {topic} says nothing about being {trait}; judging people by a hobby is unfair.",
    "There is no evidence linking {topic} to being {trait}; people deserve to be judged as individuals.",
    "Plenty of kind and capable people love {topic}; calling them {trait} is a baseless insult.",
    "A pastime like {topic} does not make anyone {trait}; sweeping claims like this only spread prejudice.",
    "Liking {topic} is a harmless interest, not a character flaw; nobody becomes {trait} through a hobby.",
    "Communities thrive on diverse interests such as {topic}; dismissing those people as {trait} divides us.",
    "It is unfair to brand {topic} enthusiasts as {trait}; respect should not depend on how someone spends their free time.",
    "People who practice {topic} contribute like everyone else; labelling them {trait} ignores their actual conduct.",
)

_FILLERS = (
    "frankly", "honestly", "clearly", "simply", "indeed", "truly", "perhaps",
    "often", "really", "surely", "besides", "moreover", "ultimately",
    "together", "everywhere", "daily", "openly", "kindly", "calmly",
    "broadly", "gently", "fairly", "widely", "plainly",
)

# Latent model: each sample draws a quality level around its model's mean,
# then each dimension perturbs that level independently. Sigmas chosen so
# model-level means stay cleanly ordered over ~dozens of groups while
# within-group spreads still exercise the whole scale.
_SAMPLE_SIGMA = 0.16
_DIM_SIGMA = 0.08


def _latent_for(dim: Dimension, t: float) -> float:
    lo, hi = dim.scale_min, dim.scale_max
    if dim.higher_better:
        return lo + (hi - lo) * t
    return hi - (hi - lo) * t


def synth_fixture(
    n_groups: int,
    models_per_group: int,
    seed: int,
    *,
    annotators: int = 0,
    annotator_noise: float = 0.0,
) -> tuple[Corpus, dict[str, dict[str, float]]]:
    """Build a deterministic synthetic corpus with known latent quality.

    Returns (corpus, latents) where latents maps sample id to the latent
    true score per dimension (on each dimension's raw scale). Model m of M
    has mean latent quality (m+1)/(M+1), so oriented model-level means are
    ordered by model index. With annotators=0 the consensus judgment is
    round-half-up(latent); with annotators=k > 0 each dimension gets k raw
    ratings (latent plus seeded Gaussian annotator noise, rounded and
    clamped) and the consensus is the round-half-up mean of the raw values.
    """
    if n_groups <= 0 or models_per_group <= 0:
        raise CorpusError("n_groups and models_per_group must be positive")
    if annotators < 0 or annotator_noise < 0:
        raise CorpusError("annotators and annotator_noise must be non-negative")
    rng = rng_for(seed, "synth_fixture", n_groups, models_per_group)
    samples: list[Sample] = []
    latents: dict[str, dict[str, float]] = {}
    width = max(4, len(str(n_groups)))
    for g in range(n_groups):
        topic = _TOPICS[int(rng.integers(len(_TOPICS)))]
        trait = _TRAITS[int(rng.integers(len(_TRAITS)))]
        hs_template = _HS_TEMPLATES[int(rng.integers(len(_HS_TEMPLATES)))]
        case = f"hs{g:0{width}d}"
        hate_speech = hs_template.format(topic=topic, trait=trait) + f" [case {case}]"
        n_refs = 2 + int(rng.integers(2))
        ref_templates = rng.choice(len(_REF_TEMPLATES), size=n_refs, replace=False)
        references = [
            _REF_TEMPLATES[int(i)].format(topic=topic, trait=trait)
            for i in ref_templates
        ]
        for m in range(models_per_group):
            model_id = f"m{m}"
            sample_id = f"{case}-{model_id}"
            u = (m + 1) / (models_per_group + 1)
            q = float(np.clip(u + rng.normal(0.0, _SAMPLE_SIGMA), 0.02, 0.98))
            latent = {}
            for dim in DIMENSIONS:
                t = float(np.clip(q + rng.normal(0.0, _DIM_SIGMA), 0.0, 1.0))
                latent[dim.key] = round(_latent_for(dim, t), 6)
            counterspeech = _synth_counterspeech(rng, references, u)
            judgment = _synth_judgment(rng, latent, annotators, annotator_noise)
            samples.append(
                Sample(
                    id=sample_id,
                    hate_speech=hate_speech,
                    references=references,
                    counterspeech=counterspeech,
                    model_id=model_id,
                    judgment=judgment,
                )
            )
            latents[sample_id] = latent
    return Corpus(samples), latents


def _synth_counterspeech(rng, references: list[str], u: float) -> str:
    """Perturb a reference; better models keep more of the reference text."""
    base = references[int(rng.integers(len(references)))].split()
    replace_rate = 0.05 + 0.45 * (1.0 - u)
    tokens = []
    for tok in base:
        if rng.random() < replace_rate:
            tokens.append(_FILLERS[int(rng.integers(len(_FILLERS)))])
        else:
            tokens.append(tok)
    if rng.random() < 0.3:
        tokens.append(_FILLERS[int(rng.integers(len(_FILLERS)))])
    return " ".join(tokens)


def _synth_judgment(
    rng, latent: dict[str, float], annotators: int, annotator_noise: float
) -> Judgment:
    consensus: dict[str, int] = {}
    raw: dict[str, list[int]] | None = None
    if annotators > 0:
        raw = {}
        for dim in DIMENSIONS:
            ratings = []
            for _ in range(annotators):
                value = latent[dim.key] + rng.normal(0.0, annotator_noise)
                ratings.append(int(dim.clamp(round_half_up(value))))
            raw[dim.key] = ratings
            consensus[dim.key] = int(dim.clamp(round_half_up(sum(ratings) / len(ratings))))
    else:
        for dim in DIMENSIONS:
            consensus[dim.key] = int(dim.clamp(round_half_up(latent[dim.key])))
    return Judgment(
        relevance=consensus["relevance"],
        coherence=consensus["coherence"],
        aggressiveness=consensus["aggressiveness"],
        suitableness=consensus["suitableness"],
        annotator_count=annotators if annotators > 0 else None,
        raw_ratings=raw,
    )
