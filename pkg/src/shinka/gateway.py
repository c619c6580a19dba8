"""Provider gateway: one interface over chat and embedding endpoints.

Three operating modes share a single code path:

* ``live``   — requests go to vendor HTTP APIs (keys from environment).
* ``record`` — requests go to the underlying provider and every
               request/response pair is appended to a transcript file.
* ``replay`` — responses come exclusively from a transcript; a request with
               no matching fingerprint is an error, never a live call.

Deterministic ``mock:*`` providers are built in so whole runs work offline:
their behavior is a pure function of (run seed, request fingerprint).
"""

import ast
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

TRANSCRIPT_SCHEMA = "shinka-transcript/1"


class ProviderError(RuntimeError):
    """Transport-level failure after the gateway's bounded retries."""


class ReplayMissError(ProviderError):
    """A replay-mode request had no recorded response."""


@dataclass
class ModelSpec:
    name: str
    endpoint_kind: str = "chat"  # chat | embedding
    temperatures: List[float] = field(default_factory=lambda: [0.0])
    max_tokens: int = 16384
    options: Dict[str, object] = field(default_factory=dict)  # vendor passthrough

    def __post_init__(self):
        if self.endpoint_kind not in ("chat", "embedding"):
            raise ValueError(f"bad endpoint_kind {self.endpoint_kind!r}")
        if not self.temperatures:
            raise ValueError("temperatures must be nonempty")
        for t in self.temperatures:
            if not 0.0 <= t <= 2.0:
                raise ValueError(f"temperature {t} outside [0, 2]")


def fingerprint(model: str, temperature: float, prompt: str) -> str:
    blob = f"{model}\x1f{temperature!r}\x1f{prompt}".encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# -- transcripts ---------------------------------------------------------------


class TranscriptRecorder:
    """Append-only transcript writer; appends are serialized."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._lock = threading.Lock()
        if not self.path.exists():
            self.path.write_text(json.dumps({"schema": TRANSCRIPT_SCHEMA}) + "\n")

    def append(self, record: Dict) -> None:
        line = json.dumps(record)
        with self._lock:
            with open(self.path, "a") as handle:
                handle.write(line + "\n")


class ReplaySource:
    """Transcript reader keyed by fingerprint.

    Repeated identical requests replay in recorded order, so stochastic live
    providers round-trip exactly.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._queues: Dict[str, List] = {}
        lines = self.path.read_text().splitlines()
        if not lines:
            raise ProviderError(f"{path}: empty transcript")
        header = json.loads(lines[0])
        if header.get("schema") != TRANSCRIPT_SCHEMA:
            raise ProviderError(
                f"{path}: expected schema {TRANSCRIPT_SCHEMA!r}, "
                f"got {header.get('schema')!r}")
        for line in lines[1:]:
            if not line.strip():
                continue
            record = json.loads(line)
            self._queues.setdefault(record["fingerprint"], []).append(
                record["response"])

    def pop(self, fp: str):
        queue = self._queues.get(fp)
        if not queue:
            raise ReplayMissError(f"no recorded response for fingerprint {fp}")
        return queue.pop(0)


# -- built-in deterministic providers ------------------------------------------


def _derived_rng(seed: int, fp: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{fp}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _first_fenced_block(prompt: str) -> Optional[str]:
    lines = prompt.split("\n")
    for i, line in enumerate(lines):
        if line.startswith("```"):
            body = []
            for j in range(i + 1, len(lines)):
                if lines[j].startswith("```"):
                    return "\n".join(body)
                body.append(lines[j])
            return None
    return None


_VECTOR_LINE = re.compile(r"^(\s*)V\s*=\s*(\[[^\]]*\])\s*$")


def _mock_vector_response(prompt: str, q: float, rng: random.Random) -> str:
    """Scripted mutator for the synthetic vector task.

    With probability q it moves one coordinate toward the origin (a strict
    improvement), otherwise away. Replies with a single SEARCH/REPLACE edit.
    """
    code = _first_fenced_block(prompt)
    if code is None:
        return "No program found."
    old_line = None
    vector = None
    indent = ""
    for line in code.split("\n"):
        match = _VECTOR_LINE.match(line)
        if match:
            try:
                candidate = ast.literal_eval(match.group(2))
            except (ValueError, SyntaxError):
                continue
            old_line = line
            indent = match.group(1)
            vector = [float(x) for x in candidate]
            break
    if vector is None:
        return "No vector assignment found."

    toward = rng.random() < q
    new_vector = list(vector)
    if toward:
        idx = max(range(len(vector)), key=lambda i: (abs(vector[i]), -i))
        new_vector[idx] = vector[idx] * rng.uniform(0.1, 0.3)
    else:
        idx = rng.randrange(len(vector))
        sign = 1.0 if vector[idx] >= 0 else -1.0
        new_vector[idx] = vector[idx] + sign * (0.05 + 0.1 * abs(vector[idx]))
    new_line = f"{indent}V = {new_vector!r}"
    return ("Adjusting one coordinate.\n"
            "<<<<<<< SEARCH\n"
            f"{old_line}\n"
            "=======\n"
            f"{new_line}\n"
            ">>>>>>> REPLACE\n")


def _mock_step_response(prompt: str, delta: float) -> str:
    """Scripted mutator adding a fixed delta to the vector's first entry."""
    code = _first_fenced_block(prompt)
    if code is None:
        return "No program found."
    for line in code.split("\n"):
        match = _VECTOR_LINE.match(line)
        if not match:
            continue
        try:
            vector = [float(x) for x in ast.literal_eval(match.group(2))]
        except (ValueError, SyntaxError):
            continue
        vector[0] += delta
        new_line = f"{match.group(1)}V = {vector!r}"
        return ("Stepping the leading coordinate.\n"
                "<<<<<<< SEARCH\n"
                f"{line}\n"
                "=======\n"
                f"{new_line}\n"
                ">>>>>>> REPLACE\n")
    return "No vector assignment found."


def _mock_echo_full_response(prompt: str) -> str:
    code = _first_fenced_block(prompt)
    if code is None:
        return "No program found."
    return f"Returning the program unchanged.\n```\n{code}\n```\n"


_MOCK_META_RESPONSE = """PROGRAM SUMMARIES
- recent programs refine the same core routine with small parameter changes
GLOBAL INSIGHTS
- incremental numeric adjustments have been the main driver of improvement
RECOMMENDATIONS
1. Keep edits small and targeted at the highest-impact values.
2. Avoid reverting changes that previously improved the score.
"""


class MockChatProvider:
    """Name-dispatched deterministic chat endpoints (``mock:...`` models)."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, model: str, temperature: float, prompt: str,
                 max_tokens: int = 16384, options: Optional[Dict] = None) -> str:
        rng = _derived_rng(self.seed, fingerprint(model, temperature, prompt))
        if model.startswith("mock:vector"):
            q = 1.0
            for part in model.split(":")[2:]:
                if part.startswith("q="):
                    q = float(part[2:])
            return _mock_vector_response(prompt, q, rng)
        if model.startswith("mock:step"):
            delta = 0.1
            for part in model.split(":")[2:]:
                if part.startswith("delta="):
                    delta = float(part[6:])
            return _mock_step_response(prompt, delta)
        if model == "mock:echo-full":
            return _mock_echo_full_response(prompt)
        if model == "mock:judge-yes":
            return "YES\nThe change looks meaningfully different."
        if model == "mock:judge-no":
            return "NO\nEssentially a duplicate of the nearest program."
        if model == "mock:meta":
            return _MOCK_META_RESPONSE
        raise ProviderError(f"unknown mock model {model!r}")


class QueueChatProvider:
    """Scripted provider returning canned responses in order (tests)."""

    def __init__(self, responses: Sequence[str]):
        self.responses = list(responses)
        self.calls = 0

    def complete(self, model: str, temperature: float, prompt: str,
                 max_tokens: int = 16384, options: Optional[Dict] = None) -> str:
        if not self.responses:
            raise ProviderError("scripted provider exhausted")
        self.calls += 1
        return self.responses.pop(0)


class TripwireChatProvider:
    """Fails the run if any live call escapes replay mode."""

    def complete(self, model: str, temperature: float, prompt: str,
                 max_tokens: int = 16384, options: Optional[Dict] = None) -> str:
        raise AssertionError(f"live provider call in replay mode (model {model!r})")


# -- live vendor adapters -------------------------------------------------------


class OpenAICompatChatProvider:
    """Chat-completions adapter for OpenAI-compatible endpoints."""

    def __init__(self, base_url: Optional[str] = None, api_key_env: str = "OPENAI_API_KEY"):
        self.base_url = (base_url or os.environ.get("SHINKA_OPENAI_BASE_URL")
                         or "https://api.openai.com/v1")
        self.api_key_env = api_key_env

    def complete(self, model: str, temperature: float, prompt: str,
                 max_tokens: int = 16384, options: Optional[Dict] = None) -> str:
        import httpx

        key = os.environ.get(self.api_key_env)
        if not key:
            raise ProviderError(f"missing API key env var {self.api_key_env}")
        payload = {
            "model": model,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        }
        payload.update(options or {})
        try:
            response = httpx.post(
                f"{self.base_url}/chat/completions",
                headers={"Authorization": f"Bearer {key}"},
                json=payload, timeout=120.0)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderError(f"chat request failed: {exc}") from exc
        return response.json()["choices"][0]["message"]["content"]


class AnthropicChatProvider:
    """Messages-API adapter for Anthropic models."""

    def __init__(self, base_url: str = "https://api.anthropic.com/v1"):
        self.base_url = base_url

    def complete(self, model: str, temperature: float, prompt: str,
                 max_tokens: int = 16384, options: Optional[Dict] = None) -> str:
        import httpx

        key = os.environ.get("ANTHROPIC_API_KEY")
        if not key:
            raise ProviderError("missing API key env var ANTHROPIC_API_KEY")
        payload = {
            "model": model,
            "temperature": temperature,
            "max_tokens": max_tokens,
            "messages": [{"role": "user", "content": prompt}],
        }
        payload.update(options or {})
        try:
            response = httpx.post(
                f"{self.base_url}/messages",
                headers={"x-api-key": key, "anthropic-version": "2023-06-01"},
                json=payload, timeout=120.0)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderError(f"chat request failed: {exc}") from exc
        return response.json()["content"][0]["text"]


class DispatchingChatProvider:
    """Routes by model name: mock:* to the builtins, claude-* to Anthropic,
    everything else to an OpenAI-compatible endpoint."""

    def __init__(self, seed: int = 0):
        self._mock = MockChatProvider(seed=seed)
        self._openai = OpenAICompatChatProvider()
        self._anthropic = AnthropicChatProvider()

    def complete(self, model: str, temperature: float, prompt: str,
                 max_tokens: int = 16384, options: Optional[Dict] = None) -> str:
        if model.startswith("mock:"):
            return self._mock.complete(model, temperature, prompt, max_tokens, options)
        if model.startswith("claude"):
            return self._anthropic.complete(model, temperature, prompt, max_tokens, options)
        return self._openai.complete(model, temperature, prompt, max_tokens, options)


# -- embedding providers --------------------------------------------------------


class HashEmbedder:
    """One-hot embedding at a hash of the full text.

    Identical texts map to identical axes; distinct texts are orthogonal up
    to hash collisions. Deterministic and dependency-free: the workhorse for
    offline runs and tests.
    """

    def __init__(self, dimension: int = 64):
        self.dimension = dimension

    def embed(self, model: str, text: str) -> List[float]:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        index = int.from_bytes(digest[:8], "big") % self.dimension
        vector = [0.0] * self.dimension
        vector[index] = 1.0
        return vector


class TokenHashEmbedder:
    """Bag-of-tokens embedding with hashed buckets; graded similarity."""

    def __init__(self, dimension: int = 256):
        self.dimension = dimension

    def embed(self, model: str, text: str) -> List[float]:
        vector = [0.0] * self.dimension
        vector[0] = 1.0  # bias slot keeps the vector nonzero for empty text
        for token in re.findall(r"\w+", text):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            vector[int.from_bytes(digest[:8], "big") % self.dimension] += 1.0
        return vector


class OpenAIEmbeddingProvider:
    def __init__(self, base_url: Optional[str] = None, dimension: int = 1536):
        self.base_url = (base_url or os.environ.get("SHINKA_OPENAI_BASE_URL")
                         or "https://api.openai.com/v1")
        self.dimension = dimension

    def embed(self, model: str, text: str) -> List[float]:
        import httpx

        key = os.environ.get("OPENAI_API_KEY")
        if not key:
            raise ProviderError("missing API key env var OPENAI_API_KEY")
        try:
            response = httpx.post(
                f"{self.base_url}/embeddings",
                headers={"Authorization": f"Bearer {key}"},
                json={"model": model, "input": text}, timeout=60.0)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        return response.json()["data"][0]["embedding"]


def build_embedding_provider(model_name: str, seed: int = 0):
    if model_name.startswith("hash-onehot"):
        parts = model_name.split(":")
        dim = int(parts[1]) if len(parts) > 1 else 64
        return HashEmbedder(dimension=dim)
    if model_name.startswith("token-hash"):
        parts = model_name.split(":")
        dim = int(parts[1]) if len(parts) > 1 else 256
        return TokenHashEmbedder(dimension=dim)
    return OpenAIEmbeddingProvider()


# -- the gateway ----------------------------------------------------------------


class LLMGateway:
    """Uniform completion/embedding entry point with transcripting.

    All chat and embedding traffic flows through here so record/replay see
    every request. Transport failures retry with bounded exponential backoff
    before surfacing as ProviderError.
    """

    def __init__(self, chat_provider=None, embedding_provider=None,
                 recorder: Optional[TranscriptRecorder] = None,
                 replay: Optional[ReplaySource] = None,
                 seed: int = 0, max_transport_retries: int = 3,
                 backoff_base: float = 0.1,
                 sleeper: Callable[[float], None] = time.sleep):
        self.chat_provider = chat_provider or DispatchingChatProvider(seed=seed)
        self.embedding_provider = embedding_provider
        self.recorder = recorder
        self.replay = replay
        self.max_transport_retries = max_transport_retries
        self.backoff_base = backoff_base
        self.sleeper = sleeper
        self.call_counts: Dict[str, int] = {}

    @property
    def replay_mode(self) -> bool:
        return self.replay is not None

    def _count(self, model: str) -> None:
        self.call_counts[model] = self.call_counts.get(model, 0) + 1

    def _with_retries(self, fn: Callable[[], object], label: str):
        delay = self.backoff_base
        for attempt in range(self.max_transport_retries):
            try:
                return fn()
            except ReplayMissError:
                raise
            except ProviderError as exc:
                if attempt == self.max_transport_retries - 1:
                    raise
                logger.warning("%s failed (%s); retrying in %.2fs", label, exc, delay)
                self.sleeper(delay)
                delay *= 2
        raise ProviderError(f"{label}: retries exhausted")

    def complete(self, spec: ModelSpec, temperature: float, prompt: str) -> str:
        fp = fingerprint(spec.name, temperature, prompt)
        self._count(spec.name)
        if self.replay is not None:
            response = self.replay.pop(fp)
            if not isinstance(response, str):
                raise ProviderError(f"transcript entry {fp} is not a chat response")
            return response
        response = self._with_retries(
            lambda: self.chat_provider.complete(
                spec.name, temperature, prompt, spec.max_tokens, spec.options),
            f"chat({spec.name})")
        if self.recorder is not None:
            self.recorder.append({
                "fingerprint": fp, "endpoint": "chat", "model": spec.name,
                "temperature": temperature, "response": response,
            })
        return response

    def embed(self, model_name: str, text: str) -> List[float]:
        fp = fingerprint(model_name, 0.0, text)
        self._count(model_name)
        if self.replay is not None:
            response = self.replay.pop(fp)
            return [float(x) for x in response]
        if self.embedding_provider is None:
            raise ProviderError("no embedding provider configured")
        vector = self._with_retries(
            lambda: self.embedding_provider.embed(model_name, text),
            f"embed({model_name})")
        if self.recorder is not None:
            self.recorder.append({
                "fingerprint": fp, "endpoint": "embedding", "model": model_name,
                "temperature": 0.0, "response": list(vector),
            })
        return list(vector)

    def sample_model(self, pool: Sequence[ModelSpec], rng,
                     bandit=None) -> Tuple[ModelSpec, float]:
        """Draw (model, temperature): bandit policy when given, else uniform."""
        if not pool:
            raise ValueError("model pool is empty")
        if bandit is not None:
            name = bandit.choose(rng)
            spec = next(s for s in pool if s.name == name)
        else:
            spec = pool[rng.randrange(len(pool))]
        temperature = spec.temperatures[rng.randrange(len(spec.temperatures))]
        return spec, temperature
