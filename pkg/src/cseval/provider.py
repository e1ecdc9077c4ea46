"""Text-completion backends, retries, and the on-disk response cache.

A backend is anything with ``complete(request) -> ProviderResponse``. The
package ships two: ``RemoteBackend`` speaks the chat-completions wire
format over HTTP, and ``MockBackend`` is a fully deterministic oracle for
tests and offline runs. ``CompletionClient`` wraps a backend with a
persistent cache and retry policy; identical requests never hit the
backend twice once cached, which is what makes whole pipeline reruns
byte-identical and call-free.

The mock understands the three prompt shapes the prompts module renders:

* draft prompts yield a numbered rubric whose last step carries a hidden
  ``[quality=q]`` tag; the expected q grows with the number of exemplars
  in the prompt.
* score prompts are answered from the fixture's latent true score for the
  sample named in the prompt, plus zero-mean noise whose sigma shrinks
  linearly as the rubric's q approaches 1 (sigma_max at q=0 down to the
  noise floor at q=1). Higher-quality rubrics therefore correlate better
  with the latent truth, which is the property the calibration loop is
  tested against.
* refine prompts return the same steps with q incremented by a seeded
  amount in [0, 0.2], capped at 1.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, runtime_checkable

import numpy as np
import requests

from . import prompts
from .corpus import Dimension, dimension, load_latents, round_half_up
from .seeding import derive_seed

logger = logging.getLogger(__name__)

ENV_API_BASE = "CSEVAL_API_BASE"
ENV_API_KEY = "CSEVAL_API_KEY"
ENV_MODEL = "CSEVAL_MODEL"

DEFAULT_SIGMA_MAX = 2.0
DEFAULT_NOISE_FLOOR = 0.2

_QUALITY_RE = re.compile(r"\[quality=([0-9.]+)\]")
_SAMPLE_REF_RE = re.compile(
    rf"^{re.escape(prompts.SAMPLE_REF_LABEL)}\s+(\S+)\s*$", re.MULTILINE
)
_CRITERIA_NAME_RE = re.compile(r"Evaluation Criteria:\s*\n+\s*(\w+)")


class ProviderError(Exception):
    """Base class for backend failures."""


class TransportError(ProviderError):
    """Network-level failure or HTTP 5xx."""


class RateLimitError(ProviderError):
    """HTTP 429; retried like a transport error."""


class MalformedResponseError(ProviderError):
    """The backend replied, but not with a usable completion."""


class PromptRoutingError(ProviderError):
    """The mock received a prompt it cannot recognize."""


@dataclass(frozen=True)
class ProviderRequest:
    prompt: str
    temperature: float
    seed: int
    model_id: str
    max_tokens: int = 512

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens <= 0:
            raise ValueError(f"max_tokens must be positive, got {self.max_tokens}")

    @property
    def cache_key(self) -> str:
        """Content hash over everything that can change the completion.

        max_tokens is deliberately excluded: truncation length does not
        alter which completion the backend would produce, and keeping it
        out lets configs tune it without invalidating a warm cache.
        """
        payload = json.dumps(
            {
                "model_id": self.model_id,
                "temperature": self.temperature,
                "seed": self.seed,
                "prompt": self.prompt,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ProviderResponse:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    cached: bool = False


@runtime_checkable
class Backend(Protocol):
    """Anything that can complete a prompt."""

    def complete(self, request: ProviderRequest) -> ProviderResponse: ...


class ResponseCache:
    """File-per-response cache keyed by request content hash.

    Layout: <root>/<first two hex chars>/<full hash>, each file a JSON
    record holding both the request fields and the response, so cache
    entries are auditable on their own. Writes go through a temp file and
    an atomic rename, which makes concurrent writers safe (last writer
    wins with identical content).
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / key

    def get(self, request: ProviderRequest) -> ProviderResponse | None:
        path = self._path(request.cache_key)
        if not path.is_file():
            return None
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
            return ProviderResponse(
                text=record["response"]["text"],
                usage=dict(record["response"].get("usage", {})),
                cached=True,
            )
        except (OSError, ValueError, KeyError) as exc:
            logger.warning("dropping unreadable cache entry %s: %s", path, exc)
            return None

    def put(self, request: ProviderRequest, response: ProviderResponse) -> None:
        path = self._path(request.cache_key)
        path.parent.mkdir(parents=True, exist_ok=True)
        record = {
            "request": {
                "model_id": request.model_id,
                "temperature": request.temperature,
                "seed": request.seed,
                "max_tokens": request.max_tokens,
                "prompt": request.prompt,
            },
            "response": {"text": response.text, "usage": response.usage},
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def __len__(self) -> int:
        return sum(1 for p in self.root.glob("??/*") if p.is_file())


@dataclass
class RetryPolicy:
    """Exponential backoff with seeded jitter: 1s, 2s, 4s by default."""

    attempts: int = 3
    base_delay: float = 1.0
    seed: int = 0
    sleep: Callable[[float], None] = time.sleep

    def delays(self) -> list[float]:
        rng = np.random.default_rng(derive_seed(self.seed, "retry"))
        return [
            self.base_delay * (2**i) * (1.0 + 0.25 * float(rng.random()))
            for i in range(self.attempts - 1)
        ]


class CompletionClient:
    """Backend + cache + retries; the one entry point the pipeline uses.

    backend_calls counts actual backend completions (cache misses) made
    through this client, so a warm rerun is observable as zero.
    """

    def __init__(
        self,
        backend: Backend,
        cache: ResponseCache | None = None,
        retry: RetryPolicy | None = None,
    ):
        self.backend = backend
        self.cache = cache
        self.retry = retry or RetryPolicy()
        self.backend_calls = 0
        self.cache_hits = 0

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        if self.cache is not None:
            hit = self.cache.get(request)
            if hit is not None:
                self.cache_hits += 1
                return hit
        delays = self.retry.delays()
        last: ProviderError | None = None
        response: ProviderResponse | None = None
        for attempt in range(self.retry.attempts):
            try:
                response = self.backend.complete(request)
                self.backend_calls += 1
                break
            except (TransportError, RateLimitError) as exc:
                last = exc
                if attempt < len(delays):
                    logger.warning(
                        "backend attempt %d/%d failed (%s); retrying",
                        attempt + 1,
                        self.retry.attempts,
                        exc,
                    )
                    self.retry.sleep(delays[attempt])
        if response is None:
            raise TransportError(
                f"backend failed after {self.retry.attempts} attempts: {last}"
            ) from last
        if not response.text:
            raise MalformedResponseError("backend returned an empty completion")
        if self.cache is not None:
            self.cache.put(request, response)
        return response


# ---------------------------------------------------------------------------
# deterministic mock
# ---------------------------------------------------------------------------

_MOCK_STEP_BANK = (
    "Read the hate speech and identify its central claim about {aspect}.",
    "Read the counterspeech in full before forming any opinion.",
    "Check how directly the counterspeech engages with the hateful claim.",
    "Note concrete evidence or examples the counterspeech offers.",
    "Compare the tone of the counterspeech against the expert examples.",
    "Weigh strengths and weaknesses before committing to a number.",
    "Pick the integer on the scale that best matches the overall impression.",
)

_MOCK_EXTRA_RULES = (
    "Penalize content that drifts away from the hateful claim.",
    "Reward phrasing that would hold up if posted publicly.",
    "Discount repetition that adds no new argument.",
    "Check that the conclusion follows from the stated reasons.",
)


@dataclass
class MockOracleState:
    """Ground truth and noise model behind the mock backend.

    latents maps sample id -> dimension key -> latent true score on the
    raw scale (the synthetic fixture's sidecar). Score noise is Gaussian
    with sigma interpolating from sigma_max at rubric quality 0 down to
    noise_floor at quality 1, truncated at two sigma. Prompts without a
    quality tag (the zero-shot baseline) are scored at zero_shot_quality.
    """

    latents: dict[str, dict[str, float]]
    sigma_max: float = DEFAULT_SIGMA_MAX
    noise_floor: float = DEFAULT_NOISE_FLOOR
    zero_shot_quality: float = 0.3
    rng_seed: int = 0

    @classmethod
    def from_latents_file(cls, path: str | Path, **kwargs) -> "MockOracleState":
        return cls(latents=load_latents(path), **kwargs)

    @classmethod
    def from_latents_files(
        cls, paths: Iterable[str | Path], **kwargs
    ) -> "MockOracleState":
        merged: dict[str, dict[str, float]] = {}
        for path in paths:
            merged.update(load_latents(path))
        return cls(latents=merged, **kwargs)

    def sigma(self, quality: float) -> float:
        return self.sigma_max * (1.0 - quality) + self.noise_floor * quality


class MockBackend:
    """Deterministic stand-in for an LLM, driven by fixture latents.

    Same request (prompt, seed, temperature, model) always yields the same
    text; there is no hidden state. `calls` counts completions served.
    """

    def __init__(self, state: MockOracleState):
        self.state = state
        self.calls = 0

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        prompt = request.prompt
        if prompts.REFINE_MARKER in prompt:
            text = self._refine(request)
        elif prompts.DRAFT_MARKER in prompt:
            text = self._draft(request)
        elif prompts.SCORE_MARKER in prompt:
            text = self._score(request, zero_shot=False)
        elif prompts.ZERO_SHOT_MARKER in prompt:
            text = self._score(request, zero_shot=True)
        else:
            raise PromptRoutingError(
                "mock backend cannot route prompt: " + prompt[:60].replace("\n", " ")
            )
        self.calls += 1
        usage = {
            "prompt_tokens": len(prompt.split()),
            "completion_tokens": len(text.split()),
        }
        return ProviderResponse(text=text, usage=usage)

    # -- prompt pieces ------------------------------------------------------

    def _aspect_of(self, prompt: str) -> Dimension:
        m = _CRITERIA_NAME_RE.search(prompt)
        if not m:
            raise PromptRoutingError("mock backend: no criteria block in prompt")
        return dimension(m.group(1).lower())

    def _quality_of(self, prompt: str) -> float | None:
        tags = _QUALITY_RE.findall(prompt)
        if not tags:
            return None
        q = float(tags[-1])
        return min(1.0, max(0.0, q))

    def _rng(self, request: ProviderRequest, *parts: object) -> np.random.Generator:
        return np.random.default_rng(
            derive_seed(self.state.rng_seed, request.seed, *parts)
        )

    def _steps_with_tag(self, steps: list[str], q: float) -> str:
        tagged = steps[:-1] + [f"{steps[-1]} [quality={q:.4f}]"]
        return "\n".join(f"{i}. {s}" for i, s in enumerate(tagged, start=1))

    # -- behaviours ---------------------------------------------------------

    def _draft(self, request: ProviderRequest) -> str:
        aspect = self._aspect_of(request.prompt)
        k = request.prompt.count(prompts.EXEMPLAR_SCORE_LABEL)
        rng = self._rng(
            request, "draft", aspect.key, request.temperature, k,
            hashlib.sha256(request.prompt.encode()).hexdigest()[:16],
        )
        q = float(np.clip(0.15 + 0.06 * k + rng.normal(0.0, 0.12), 0.05, 0.92))
        n_steps = 3 + int(rng.integers(3))
        picks = rng.choice(len(_MOCK_STEP_BANK), size=n_steps, replace=False)
        steps = [_MOCK_STEP_BANK[int(i)].format(aspect=aspect.key) for i in picks]
        return self._steps_with_tag(steps, q)

    def _refine(self, request: ProviderRequest) -> str:
        q = self._quality_of(request.prompt)
        if q is None:
            raise PromptRoutingError("mock backend: refine prompt without quality tag")
        steps = [
            m.group(1)
            for m in map(
                re.compile(r"^\s*\d+[.)]\s+(.+?)\s*$").match,
                request.prompt.splitlines(),
            )
            if m and not m.group(1).startswith(("Modify:", "Paraphrase:", "Addition:", "Calibrate:"))
        ]
        steps = [_QUALITY_RE.sub("", s).rstrip() for s in steps]
        if not steps:
            raise PromptRoutingError("mock backend: refine prompt without steps")
        rng = self._rng(
            request, "refine",
            hashlib.sha256(request.prompt.encode()).hexdigest()[:16],
        )
        new_q = min(1.0, q + float(rng.uniform(0.0, 0.2)))
        if rng.random() < 0.5:
            steps = steps + [_MOCK_EXTRA_RULES[int(rng.integers(len(_MOCK_EXTRA_RULES)))]]
        return self._steps_with_tag(steps, new_q)

    def _score(self, request: ProviderRequest, zero_shot: bool) -> str:
        aspect = self._aspect_of(request.prompt)
        m = _SAMPLE_REF_RE.search(request.prompt)
        if not m:
            raise PromptRoutingError("mock backend: score prompt without sample reference")
        sample_id = m.group(1)
        try:
            latent = self.state.latents[sample_id][aspect.key]
        except KeyError:
            raise PromptRoutingError(
                f"mock backend: no latent score for sample {sample_id!r} / {aspect.key}"
            ) from None
        q = self.state.zero_shot_quality if zero_shot else self._quality_of(request.prompt)
        if q is None:
            raise PromptRoutingError("mock backend: score prompt without quality tag")
        sigma = self.state.sigma(q)
        if sigma > 0:
            rng = self._rng(request, "score", sample_id, aspect.key, f"{q:.4f}")
            noise = float(np.clip(rng.normal(0.0, sigma), -2.0 * sigma, 2.0 * sigma))
        else:
            noise = 0.0
        score = int(aspect.clamp(round_half_up(latent + noise)))
        return (
            f"Assessing the counterspeech for {aspect.key}.\n"
            f"Score: {score}"
        )


# ---------------------------------------------------------------------------
# remote chat-completions backend
# ---------------------------------------------------------------------------


class RemoteBackend:
    """Chat-completions backend over HTTP.

    Configuration falls back to the CSEVAL_API_BASE / CSEVAL_API_KEY /
    CSEVAL_MODEL environment variables. The request seed is forwarded to
    the server; providers that honor it give reproducible samples.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model_id: str | None = None,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.base_url = (base_url or os.environ.get(ENV_API_BASE) or "").rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY) or ""
        self.model_id = model_id or os.environ.get(ENV_MODEL) or ""
        if not self.base_url:
            raise ProviderError(f"no API base url (set {ENV_API_BASE})")
        self.timeout = timeout
        self.session = session or requests.Session()

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        payload = {
            "model": request.model_id or self.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code == 429:
            raise RateLimitError("rate limited (HTTP 429)")
        if resp.status_code >= 500:
            raise TransportError(f"server error (HTTP {resp.status_code})")
        if resp.status_code != 200:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected payload shape: {exc}") from exc
        usage = {
            k: int(v)
            for k, v in (body.get("usage") or {}).items()
            if isinstance(v, (int, float))
        }
        return ProviderResponse(text=text or "", usage=usage)
