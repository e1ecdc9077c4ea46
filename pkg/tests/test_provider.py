import json
import re

import numpy as np
import pytest
import requests

from cseval.corpus import RELEVANCE, SUITABLENESS, round_half_up
from cseval.prompts import (
    CotCandidate,
    Exemplar,
    parse_cot,
    parse_score,
    render_draft,
    render_refine,
    render_score,
    render_zero_shot,
)
from cseval.provider import (
    ENV_API_BASE,
    ENV_API_KEY,
    ENV_MODEL,
    CompletionClient,
    MalformedResponseError,
    MockBackend,
    MockOracleState,
    PromptRoutingError,
    ProviderError,
    ProviderRequest,
    ProviderResponse,
    RateLimitError,
    RemoteBackend,
    ResponseCache,
    RetryPolicy,
    TransportError,
)

from conftest import make_mock_client, make_sample

_QUALITY = re.compile(r"\[quality=([0-9.]+)\]")


def _request(prompt, seed=1, temperature=0.0, model_id="mock"):
    return ProviderRequest(prompt, temperature, seed, model_id)


def _tagged_cot(q: float, aspect=RELEVANCE) -> CotCandidate:
    return CotCandidate(
        id="c", aspect=aspect,
        steps=["Read both texts.", f"Pick a score. [quality={q:.4f}]"],
    )


def _score_prompt(latent_seed="s1", q=1.0, aspect=RELEVANCE):
    return render_score(
        aspect, _tagged_cot(q, aspect), "hs text", "cs text", sample_id=latent_seed
    )


# ---------------------------------------------------------------------------
# requests and cache
# ---------------------------------------------------------------------------


def test_request_validation():
    with pytest.raises(ValueError, match="temperature"):
        ProviderRequest("p", -0.1, 1, "m")
    with pytest.raises(ValueError, match="max_tokens"):
        ProviderRequest("p", 0.0, 1, "m", max_tokens=0)


def test_cache_key_ignores_max_tokens_only():
    base = ProviderRequest("p", 0.5, 7, "m", max_tokens=256)
    assert base.cache_key == ProviderRequest("p", 0.5, 7, "m", max_tokens=999).cache_key
    for other in (
        ProviderRequest("q", 0.5, 7, "m"),
        ProviderRequest("p", 0.6, 7, "m"),
        ProviderRequest("p", 0.5, 8, "m"),
        ProviderRequest("p", 0.5, 7, "m2"),
    ):
        assert base.cache_key != other.cache_key


def test_cache_round_trip(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    request = _request("hello")
    assert cache.get(request) is None
    cache.put(request, ProviderResponse(text="world", usage={"completion_tokens": 1}))
    hit = cache.get(request)
    assert hit.text == "world"
    assert hit.usage == {"completion_tokens": 1}
    assert hit.cached is True
    assert len(cache) == 1
    # layout: two-hex-char shard directory named by the key prefix
    files = list((tmp_path / "cache").glob("??/*"))
    assert len(files) == 1
    assert files[0].name.startswith(files[0].parent.name)


def test_cache_survives_corrupt_entries(tmp_path):
    cache = ResponseCache(tmp_path)
    request = _request("x")
    cache.put(request, ProviderResponse(text="y"))
    entry = next(tmp_path.glob("??/*"))
    entry.write_text("{not json")
    assert cache.get(request) is None


def test_cache_entry_is_auditable(tmp_path):
    cache = ResponseCache(tmp_path)
    request = ProviderRequest("the prompt", 0.25, 9, "m7", max_tokens=64)
    cache.put(request, ProviderResponse(text="reply"))
    record = json.loads(next(tmp_path.glob("??/*")).read_text())
    assert record["request"]["prompt"] == "the prompt"
    assert record["request"]["seed"] == 9
    assert record["response"]["text"] == "reply"


# ---------------------------------------------------------------------------
# retries
# ---------------------------------------------------------------------------


class FlakyBackend:
    def __init__(self, failures, exc=TransportError):
        self.failures = failures
        self.exc = exc
        self.attempts = 0

    def complete(self, request):
        self.attempts += 1
        if self.attempts <= self.failures:
            raise self.exc(f"boom {self.attempts}")
        return ProviderResponse(text="ok")


def test_retry_delays_exponential_with_bounded_jitter():
    policy = RetryPolicy(attempts=4, base_delay=1.0, seed=3)
    delays = policy.delays()
    assert len(delays) == 3
    for i, d in enumerate(delays):
        assert 2**i <= d < 2**i * 1.25
    assert delays == RetryPolicy(attempts=4, base_delay=1.0, seed=3).delays()


def test_client_retries_transient_failures():
    slept = []
    backend = FlakyBackend(failures=2, exc=RateLimitError)
    client = CompletionClient(
        backend, retry=RetryPolicy(attempts=3, sleep=slept.append)
    )
    assert client.complete(_request("p")).text == "ok"
    assert backend.attempts == 3
    assert len(slept) == 2
    assert client.backend_calls == 1


def test_client_gives_up_after_attempts():
    slept = []
    backend = FlakyBackend(failures=99)
    client = CompletionClient(
        backend, retry=RetryPolicy(attempts=3, sleep=slept.append)
    )
    with pytest.raises(TransportError, match="after 3 attempts"):
        client.complete(_request("p"))
    assert backend.attempts == 3
    assert len(slept) == 2


def test_client_does_not_retry_non_transient_errors():
    slept = []

    class BrokenBackend:
        def complete(self, request):
            raise MalformedResponseError("garbage")

    client = CompletionClient(
        BrokenBackend(), retry=RetryPolicy(attempts=3, sleep=slept.append)
    )
    with pytest.raises(MalformedResponseError):
        client.complete(_request("p"))
    assert slept == []


def test_client_rejects_empty_completion_and_skips_cache(tmp_path):
    class EmptyBackend:
        def complete(self, request):
            return ProviderResponse(text="")

    cache = ResponseCache(tmp_path)
    client = CompletionClient(EmptyBackend(), cache=cache)
    with pytest.raises(MalformedResponseError, match="empty"):
        client.complete(_request("p"))
    assert len(cache) == 0


def test_client_serves_from_cache(tmp_path):
    latents = {"s1": {"relevance": 4.0}}
    cache = ResponseCache(tmp_path)
    first = make_mock_client(latents, cache=cache)
    request = _request(_score_prompt())
    text = first.complete(request).text
    assert first.backend_calls == 1

    second = make_mock_client(latents, cache=cache)
    hit = second.complete(request)
    assert hit.text == text
    assert hit.cached is True
    assert second.backend_calls == 0
    assert second.cache_hits == 1


# ---------------------------------------------------------------------------
# mock backend: routing and determinism
# ---------------------------------------------------------------------------


def test_mock_routes_all_prompt_kinds():
    latents = {"s1": {"relevance": 4.0}}
    backend = MockBackend(MockOracleState(latents=latents))
    exemplar = Exemplar(sample=make_sample("s1"), human_score=4)
    prompts_by_kind = {
        "draft": render_draft(RELEVANCE, [exemplar]),
        "score": _score_prompt(),
        "zero_shot": render_zero_shot(RELEVANCE, "h", "c", sample_id="s1"),
        "refine": render_refine(RELEVANCE, _tagged_cot(0.5), [(exemplar, 2)]),
    }
    for kind, prompt in prompts_by_kind.items():
        response = backend.complete(_request(prompt))
        assert response.text, kind
        assert response.usage["prompt_tokens"] == len(prompt.split())
        assert response.usage["completion_tokens"] == len(response.text.split())
    assert backend.calls == 4
    with pytest.raises(PromptRoutingError, match="cannot route"):
        backend.complete(_request("what is the weather like"))


def test_mock_is_deterministic_per_request():
    latents = {"s1": {"relevance": 2.5}}
    backend = MockBackend(MockOracleState(latents=latents))
    request = _request(_score_prompt(q=0.4), seed=11)
    assert backend.complete(request).text == backend.complete(request).text
    other_seed = backend.complete(_request(_score_prompt(q=0.4), seed=12)).text
    texts = {backend.complete(_request(_score_prompt(q=0.4), seed=s)).text for s in range(30)}
    assert len(texts) > 1, other_seed


def test_mock_score_requires_sample_reference_and_latent():
    backend = MockBackend(MockOracleState(latents={"s1": {"relevance": 3.0}}))
    no_ref = render_score(RELEVANCE, _tagged_cot(0.5), "h", "c")
    with pytest.raises(PromptRoutingError, match="sample reference"):
        backend.complete(_request(no_ref))
    with pytest.raises(PromptRoutingError, match="no latent score"):
        backend.complete(_request(_score_prompt("unknown-id")))
    with pytest.raises(PromptRoutingError, match="no latent"):
        backend.complete(_request(_score_prompt("s1", aspect=SUITABLENESS)))


# ---------------------------------------------------------------------------
# mock backend: score noise model
# ---------------------------------------------------------------------------


def test_sigma_interpolates_from_max_to_floor():
    state = MockOracleState(latents={}, sigma_max=2.0, noise_floor=0.2)
    assert state.sigma(0.0) == 2.0
    assert state.sigma(1.0) == pytest.approx(0.2)
    assert state.sigma(0.5) == pytest.approx(1.1)


def test_perfect_rubric_with_zero_floor_recovers_latents_exactly():
    latents = {
        "a": {"relevance": 4.5},   # rounds half-up to 5
        "b": {"relevance": 4.49},  # rounds to 4
        "c": {"relevance": 1.2},
        "d": {"relevance": 3.5},
    }
    client = make_mock_client(latents, noise_floor=0.0)
    for sid, latent in latents.items():
        text = client.complete(_request(_score_prompt(sid, q=1.0), seed=5)).text
        assert parse_score(text, RELEVANCE) == round_half_up(latent["relevance"])


def test_score_noise_is_truncated_at_two_sigma():
    latents = {f"s{i}": {"relevance": 3.0} for i in range(40)}
    client = make_mock_client(latents, sigma_max=2.0, noise_floor=0.2)
    sigma = 0.2  # at q=1
    for i in range(40):
        text = client.complete(_request(_score_prompt(f"s{i}", q=1.0), seed=i)).text
        score = parse_score(text, RELEVANCE)
        assert abs(score - 3.0) <= 2 * sigma + 0.5


def test_zero_shot_scores_match_equivalent_quality_rubric():
    # the score rng is keyed by (seed, sample, aspect, quality), not by the
    # prompt text, so a rubric tagged at the zero-shot quality level gets
    # the same noise draw and the same score
    latents = {f"s{i}": {"relevance": 2.0 + (i % 4)} for i in range(12)}
    client = make_mock_client(latents)
    for i in range(12):
        zs = render_zero_shot(RELEVANCE, "h", "c", sample_id=f"s{i}")
        cot = _score_prompt(f"s{i}", q=0.3)
        zs_score = parse_score(client.complete(_request(zs, seed=7)).text, RELEVANCE)
        cot_score = parse_score(client.complete(_request(cot, seed=7)).text, RELEVANCE)
        assert zs_score == cot_score


def test_lower_quality_means_noisier_scores():
    latents = {f"s{i}": {"relevance": 3.0} for i in range(150)}
    client = make_mock_client(latents)

    def spread(q):
        scores = [
            parse_score(
                client.complete(_request(_score_prompt(f"s{i}", q=q), seed=i)).text,
                RELEVANCE,
            )
            for i in range(150)
        ]
        return float(np.std(scores))

    assert spread(0.95) < spread(0.2)


# ---------------------------------------------------------------------------
# mock backend: drafting and refinement
# ---------------------------------------------------------------------------


def _draft_prompt(k: int):
    exemplars = [Exemplar(make_sample(f"e{i}"), human_score=3) for i in range(k)]
    return render_draft(RELEVANCE, exemplars)


def _quality_of(text: str) -> float:
    return float(_QUALITY.findall(text)[-1])


def test_draft_replies_parse_as_rubrics():
    backend = MockBackend(MockOracleState(latents={}))
    text = backend.complete(_request(_draft_prompt(4), seed=2)).text
    cot = parse_cot(text, RELEVANCE, "d1", fewshot_size=4)
    assert 3 <= len(cot.steps) <= 5
    assert 0.05 <= _quality_of(text) <= 0.92


def test_draft_quality_grows_with_exemplar_count():
    backend = MockBackend(MockOracleState(latents={}))
    means = []
    for k in (2, 8):
        prompt = _draft_prompt(k)
        qs = [
            _quality_of(backend.complete(_request(prompt, seed=s)).text)
            for s in range(300)
        ]
        means.append(float(np.mean(qs)))
    # expected slope is 0.06 per exemplar: roughly 0.27 vs 0.63
    assert means[1] - means[0] > 0.2


def test_refine_keeps_steps_and_raises_quality():
    backend = MockBackend(MockOracleState(latents={}))
    parent_q = 0.4
    parent = CotCandidate(
        id="p", aspect=RELEVANCE,
        steps=["Check the topic.", "Weigh tone.", f"Decide. [quality={parent_q:.4f}]"],
    )
    exemplar = Exemplar(make_sample("e1"), human_score=5)
    prompt = render_refine(RELEVANCE, parent, [(exemplar, 1)])
    for seed in range(40):
        text = backend.complete(_request(prompt, seed=seed)).text
        child = parse_cot(text, RELEVANCE, "p-r1", generation=1, parent_id="p")
        new_q = _quality_of(text)
        assert parent_q <= new_q <= min(1.0, parent_q + 0.2)
        base = [s for s in child.steps]
        base[-1] = _QUALITY.sub("", base[-1]).rstrip()
        # child is the parent's steps, optionally with one appended rule
        assert base[: len(parent.steps)] == [
            "Check the topic.", "Weigh tone.", "Decide.",
        ]
        assert len(base) in (len(parent.steps), len(parent.steps) + 1)


def test_refine_quality_caps_at_one():
    backend = MockBackend(MockOracleState(latents={}))
    parent = _tagged_cot(0.95)
    prompt = render_refine(
        RELEVANCE, parent, [(Exemplar(make_sample("e1"), 5), 1)]
    )
    qs = [
        _quality_of(backend.complete(_request(prompt, seed=s)).text)
        for s in range(40)
    ]
    assert max(qs) <= 1.0


def test_state_from_latents_files_merges(tmp_path):
    a = tmp_path / "a.latent"
    b = tmp_path / "b.latent"
    a.write_text(json.dumps({"s1": {"relevance": 1.0}, "s2": {"relevance": 2.0}}))
    b.write_text(json.dumps({"s2": {"relevance": 3.0}, "s3": {"relevance": 4.0}}))
    state = MockOracleState.from_latents_files([a, b])
    assert state.latents["s1"]["relevance"] == 1.0
    assert state.latents["s2"]["relevance"] == 3.0  # later file wins
    assert state.latents["s3"]["relevance"] == 4.0
    single = MockOracleState.from_latents_file(a)
    assert set(single.latents) == {"s1", "s2"}


# ---------------------------------------------------------------------------
# remote backend
# ---------------------------------------------------------------------------


class FakeResponse:
    def __init__(self, status_code, payload=None):
        self.status_code = status_code
        self._payload = payload
        self.text = json.dumps(payload) if payload is not None else "oops"

    def json(self):
        if self._payload is None:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _payload(text="fine", usage=None):
    return {
        "choices": [{"message": {"content": text}}],
        "usage": usage or {"prompt_tokens": 3, "completion_tokens": 1},
    }


def test_remote_backend_happy_path():
    session = FakeSession([FakeResponse(200, _payload("the reply"))])
    backend = RemoteBackend(
        base_url="https://api.example.test/v1/", api_key="k-123",
        model_id="big-model", session=session,
    )
    response = backend.complete(ProviderRequest("hi", 0.2, 42, ""))
    assert response.text == "the reply"
    assert response.usage["prompt_tokens"] == 3
    post = session.posts[0]
    assert post["url"] == "https://api.example.test/v1/chat/completions"
    assert post["json"]["model"] == "big-model"
    assert post["json"]["seed"] == 42
    assert post["json"]["temperature"] == 0.2
    assert post["headers"]["Authorization"] == "Bearer k-123"


def test_remote_backend_status_mapping():
    backend = lambda *outcomes: RemoteBackend(
        base_url="https://x.test", session=FakeSession(outcomes)
    )
    request = ProviderRequest("p", 0.0, 1, "m")
    with pytest.raises(RateLimitError):
        backend(FakeResponse(429)).complete(request)
    with pytest.raises(TransportError):
        backend(FakeResponse(503)).complete(request)
    with pytest.raises(ProviderError, match="HTTP 404"):
        backend(FakeResponse(404)).complete(request)
    with pytest.raises(MalformedResponseError):
        backend(FakeResponse(200, {"unexpected": True})).complete(request)
    with pytest.raises(TransportError, match="request failed"):
        backend(requests.ConnectionError("refused")).complete(request)


def test_remote_backend_env_fallbacks(monkeypatch):
    monkeypatch.delenv(ENV_API_BASE, raising=False)
    monkeypatch.delenv(ENV_API_KEY, raising=False)
    monkeypatch.delenv(ENV_MODEL, raising=False)
    with pytest.raises(ProviderError, match=ENV_API_BASE):
        RemoteBackend()
    monkeypatch.setenv(ENV_API_BASE, "https://env.test/")
    monkeypatch.setenv(ENV_API_KEY, "env-key")
    monkeypatch.setenv(ENV_MODEL, "env-model")
    backend = RemoteBackend()
    assert backend.base_url == "https://env.test"
    assert backend.api_key == "env-key"
    assert backend.model_id == "env-model"
