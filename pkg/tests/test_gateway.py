import random

import pytest

from shinka.bandit import BanditState
from shinka.gateway import (LLMGateway, MockChatProvider, ModelSpec,
                            ProviderError, QueueChatProvider, ReplayMissError,
                            ReplaySource, TranscriptRecorder,
                            TripwireChatProvider, build_embedding_provider,
                            fingerprint)


def _spec(name="mock:judge-yes", temps=(0.0,)):
    return ModelSpec(name=name, temperatures=list(temps), max_tokens=1024)


def test_mock_provider_is_deterministic_per_prompt():
    provider = MockChatProvider(seed=3)
    prompt = "# Current program\n```python\nV = [1.0, 2.0]\n```\n"
    first = provider.complete("mock:vector:q=1.0", 0.0, prompt)
    second = provider.complete("mock:vector:q=1.0", 0.0, prompt)
    assert first == second
    assert "<<<<<<< SEARCH" in first


def test_mock_vector_reacts_to_prompt_changes():
    provider = MockChatProvider(seed=3)
    a = provider.complete("mock:vector:q=1.0", 0.0,
                          "```python\nV = [1.0, 2.0]\n```\nrun A")
    b = provider.complete("mock:vector:q=1.0", 0.0,
                          "```python\nV = [1.0, 2.0]\n```\nrun B")
    assert a != b  # different fingerprints draw different mutations


def test_mock_echo_full_returns_program():
    provider = MockChatProvider()
    prompt = "# Current program\n```python\nx = 41\n```\n"
    response = provider.complete("mock:echo-full", 0.0, prompt)
    assert "x = 41" in response
    assert response.count("```") == 2


def test_unknown_mock_model_errors():
    with pytest.raises(ProviderError, match="unknown mock"):
        MockChatProvider().complete("mock:nope", 0.0, "hi")


def test_gateway_complete_counts_calls():
    gateway = LLMGateway(chat_provider=QueueChatProvider(["a", "b"]))
    spec = _spec("m1")
    gateway.complete(spec, 0.0, "one")
    gateway.complete(spec, 0.0, "two")
    assert gateway.call_counts == {"m1": 2}


def test_record_then_replay_round_trip(tmp_path):
    path = tmp_path / "transcript.jsonl"
    recorder = TranscriptRecorder(path)
    live = LLMGateway(chat_provider=MockChatProvider(seed=7),
                      embedding_provider=build_embedding_provider("hash-onehot:16"),
                      recorder=recorder)
    spec = _spec("mock:judge-yes")
    first = live.complete(spec, 0.0, "please judge this")
    vec = live.embed("hash-onehot:16", "some mutable code")

    replayed = LLMGateway(chat_provider=TripwireChatProvider(),
                          replay=ReplaySource(path))
    assert replayed.complete(spec, 0.0, "please judge this") == first
    assert replayed.embed("hash-onehot:16", "some mutable code") == vec


def test_replay_miss_names_fingerprint(tmp_path):
    path = tmp_path / "transcript.jsonl"
    TranscriptRecorder(path)  # header only
    gateway = LLMGateway(chat_provider=TripwireChatProvider(),
                         replay=ReplaySource(path))
    fp = fingerprint("mock:judge-yes", 0.0, "novel prompt")
    with pytest.raises(ReplayMissError, match=fp):
        gateway.complete(_spec(), 0.0, "novel prompt")


def test_replay_mode_never_calls_live_provider(tmp_path):
    path = tmp_path / "transcript.jsonl"
    recorder = TranscriptRecorder(path)
    recorder.append({"fingerprint": fingerprint("m", 0.5, "p"),
                     "endpoint": "chat", "model": "m", "temperature": 0.5,
                     "response": "recorded"})
    gateway = LLMGateway(chat_provider=TripwireChatProvider(),
                         replay=ReplaySource(path))
    assert gateway.complete(ModelSpec(name="m", temperatures=[0.5]), 0.5,
                            "p") == "recorded"


def test_replay_duplicate_fingerprints_pop_in_order(tmp_path):
    path = tmp_path / "transcript.jsonl"
    recorder = TranscriptRecorder(path)
    fp = fingerprint("m", 1.0, "same prompt")
    for response in ("first", "second"):
        recorder.append({"fingerprint": fp, "endpoint": "chat", "model": "m",
                         "temperature": 1.0, "response": response})
    gateway = LLMGateway(chat_provider=TripwireChatProvider(),
                         replay=ReplaySource(path))
    spec = ModelSpec(name="m", temperatures=[1.0])
    assert gateway.complete(spec, 1.0, "same prompt") == "first"
    assert gateway.complete(spec, 1.0, "same prompt") == "second"
    with pytest.raises(ReplayMissError):
        gateway.complete(spec, 1.0, "same prompt")


def test_transport_retries_then_surface():
    class Flaky:
        def __init__(self, fail_times):
            self.remaining = fail_times

        def complete(self, model, temperature, prompt, max_tokens=0,
                     options=None):
            if self.remaining > 0:
                self.remaining -= 1
                raise ProviderError("transient")
            return "ok"

    sleeps = []
    gateway = LLMGateway(chat_provider=Flaky(2), max_transport_retries=3,
                         backoff_base=0.01, sleeper=sleeps.append)
    assert gateway.complete(_spec("m"), 0.0, "p") == "ok"
    assert sleeps == [0.01, 0.02]  # bounded exponential backoff

    gateway = LLMGateway(chat_provider=Flaky(10), max_transport_retries=3,
                         backoff_base=0.01, sleeper=sleeps.append)
    with pytest.raises(ProviderError):
        gateway.complete(_spec("m"), 0.0, "p")


def test_sample_model_single_pool():
    gateway = LLMGateway(chat_provider=QueueChatProvider([]))
    pool = [_spec("only", temps=(0.0, 1.0))]
    rng = random.Random(0)
    for _ in range(10):
        spec, temp = gateway.sample_model(pool, rng)
        assert spec.name == "only"
        assert temp in (0.0, 1.0)


def test_sample_model_uniform_frequencies():
    gateway = LLMGateway(chat_provider=QueueChatProvider([]))
    pool = [_spec(f"m{i}") for i in range(4)]
    rng = random.Random(11)
    draws = 20000
    tally = {f"m{i}": 0 for i in range(4)}
    for _ in range(draws):
        spec, _ = gateway.sample_model(pool, rng)
        tally[spec.name] += 1
    for name in tally:
        assert tally[name] / draws == pytest.approx(0.25, abs=0.02)


def test_sample_model_temperature_uniform_over_spec_list():
    gateway = LLMGateway(chat_provider=QueueChatProvider([]))
    pool = [_spec("m", temps=(0.0, 0.5, 1.0))]
    rng = random.Random(12)
    draws = 15000
    tally = {0.0: 0, 0.5: 0, 1.0: 0}
    for _ in range(draws):
        _, temp = gateway.sample_model(pool, rng)
        tally[temp] += 1
    for temp in tally:
        assert tally[temp] / draws == pytest.approx(1 / 3, abs=0.02)


def test_sample_model_with_dominant_bandit_arm():
    # Scripted rewards: arm "good" improves often, arm "bad" never. After
    # warmup the bandit should route most samples to the good arm.
    gateway = LLMGateway(chat_provider=QueueChatProvider([]))
    pool = [_spec("good"), _spec("bad")]
    bandit = BanditState(arm_names=["good", "bad"], exploration_coefficient=1.0)
    rng = random.Random(42)
    chosen = []
    for round_index in range(300):
        spec, _ = gateway.sample_model(pool, rng, bandit=bandit)
        chosen.append(spec.name)
        reward = (1.0 if rng.random() < 0.4 else 0.0) if spec.name == "good" else 0.0
        bandit.update(spec.name, reward)
    share = chosen[50:].count("good") / len(chosen[50:])
    assert share > 0.6


def test_model_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec(name="m", temperatures=[])
    with pytest.raises(ValueError):
        ModelSpec(name="m", temperatures=[3.0])
    with pytest.raises(ValueError):
        ModelSpec(name="m", endpoint_kind="stream")


def test_hash_embedder_dimension_parsing():
    provider = build_embedding_provider("hash-onehot:32")
    vec = provider.embed("hash-onehot:32", "text")
    assert len(vec) == 32
    assert sum(vec) == 1.0
