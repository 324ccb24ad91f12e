"""
LLM gateway: the single choke-point for chat completions and embeddings.

Two backends sit behind it:
  - live: OpenAI-compatible HTTP endpoints with retry/backoff and a token-bucket
    rate limiter
  - stub: deterministic, offline responses keyed on the prompt text
"""
from __future__ import annotations

import hashlib
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence

import numpy as np
import requests
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field

from config.settings import (
    CHAT_MAX_TOKENS,
    CHAT_TEMPERATURE,
    EMBEDDING_DIMENSION,
    GATEWAY_API_KEY_ENV,
    GATEWAY_BACKEND,
    GATEWAY_BACKOFF_BASE,
    GATEWAY_BACKOFF_FACTOR,
    GATEWAY_BASE_URL,
    GATEWAY_CHAT_MODEL,
    GATEWAY_EMBED_MODEL,
    GATEWAY_MAX_RETRIES,
    GATEWAY_REQUESTS_PER_SECOND,
    GATEWAY_TIMEOUT_SECONDS,
    RANDOM_SEED,
)
from src.indexing.analyzer import analyze, tokenize
from src.llm.prompts import PromptLibrary, render_text
from src.utils.errors import GatewayConfigError, TransportError

logger = logging.getLogger(__name__)

# transport failures worth another attempt; other RequestExceptions fail fast
RETRYABLE_ERRORS = (
    requests.ConnectionError,
    requests.Timeout,
    requests.exceptions.ChunkedEncodingError,
    requests.exceptions.ContentDecodingError,
)


class GatewayConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    backend: Literal["live", "stub"] = GATEWAY_BACKEND
    base_url: str = GATEWAY_BASE_URL
    api_key_env_var: str = GATEWAY_API_KEY_ENV
    model_chat: str = GATEWAY_CHAT_MODEL
    model_embed: str = GATEWAY_EMBED_MODEL
    max_retries: int = Field(GATEWAY_MAX_RETRIES, ge=0)
    requests_per_second: float = Field(GATEWAY_REQUESTS_PER_SECOND, gt=0)
    timeout_seconds: float = Field(GATEWAY_TIMEOUT_SECONDS, gt=0)
    embedding_dimension: int = Field(EMBEDDING_DIMENSION, ge=2)
    temperature: float = Field(CHAT_TEMPERATURE, ge=0.0, le=2.0)
    max_tokens: int = Field(CHAT_MAX_TOKENS, ge=1)


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = CHAT_TEMPERATURE
    max_tokens: int = CHAT_MAX_TOKENS
    seed: Optional[int] = None
    # template name; routes stub responses, never sent over the wire
    task: str = "generic"
    variables: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if not self.user_prompt or not self.user_prompt.strip():
            raise ValueError("user_prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass
class Embedding:
    vector: np.ndarray
    norm: float = field(init=False)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float)
        self.norm = float(np.linalg.norm(self.vector))

    @property
    def dimension(self) -> int:
        return int(self.vector.shape[0])

    def normalized(self) -> np.ndarray:
        return self.vector / self.norm if self.norm > 0 else self.vector

    def cosine(self, other: "Embedding") -> float:
        if self.norm == 0 or other.norm == 0:
            return 0.0
        return float(np.dot(self.vector, other.vector) / (self.norm * other.norm))


class RateLimiter:
    """Token bucket; `acquire` blocks until a request may be issued."""

    def __init__(self, rate: float, capacity: float = 1.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be > 0")
        self.rate = rate
        self.capacity = capacity
        self._clock = clock
        self._sleep = sleep
        self._tokens = capacity
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            while True:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return now
                self._sleep((1.0 - self._tokens) / self.rate)


class JsonHttpClient:
    """POSTs JSON with retries on 429/5xx and transport errors."""

    def __init__(self, base_url: str, headers: Mapping[str, str] = None, max_retries: int = GATEWAY_MAX_RETRIES,
                 timeout: float = GATEWAY_TIMEOUT_SECONDS, limiter: RateLimiter = None,
                 sleep: Callable[[float], None] = time.sleep,
                 backoff_base: float = GATEWAY_BACKOFF_BASE, backoff_factor: float = GATEWAY_BACKOFF_FACTOR,
                 rng: random.Random = None):
        self.base_url = base_url.rstrip("/")
        self.headers = dict(headers or {})
        self.max_retries = max_retries
        self.timeout = timeout
        self.limiter = limiter
        self._sleep = sleep
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self._rng = rng or random.Random()

    def backoff_delay(self, attempt: int) -> float:
        delay = self.backoff_base * self.backoff_factor ** attempt
        return delay + self._rng.uniform(0.0, delay / 2)

    def post(self, path: str, payload: Mapping[str, Any]) -> Any:
        url = f"{self.base_url}/{path.lstrip('/')}"
        last_status = None
        for attempt in range(self.max_retries + 1):
            if self.limiter is not None:
                self.limiter.acquire()
            retry_after = 0.0
            try:
                response = requests.post(url, json=payload, headers=self.headers, timeout=self.timeout)
            except RETRYABLE_ERRORS as e:
                last_status = None
                logger.warning("POST %s failed (%s), attempt %d", url, e, attempt + 1)
            except requests.RequestException as e:
                raise TransportError(f"POST {url} failed: {e}") from e
            else:
                if response.status_code == 200:
                    try:
                        return response.json()
                    except ValueError as e:
                        raise TransportError(f"POST {url} returned invalid JSON", 200) from e
                last_status = response.status_code
                if last_status != 429 and last_status < 500:
                    raise TransportError(f"POST {url} rejected", last_status)
                header = response.headers.get("Retry-After", "")
                if header.replace(".", "", 1).isdigit():
                    retry_after = float(header)
                logger.warning("POST %s returned %d, attempt %d", url, last_status, attempt + 1)
            if attempt < self.max_retries:
                self._sleep(max(self.backoff_delay(attempt), retry_after))
        raise TransportError(f"POST {url} failed after {self.max_retries + 1} attempts", last_status)


class LiveBackend:
    """OpenAI-compatible /chat/completions and /embeddings."""

    def __init__(self, config: GatewayConfig, sleep: Callable[[float], None] = time.sleep,
                 clock: Callable[[], float] = time.monotonic):
        load_dotenv()
        api_key = os.environ.get(config.api_key_env_var)
        if not api_key:
            raise GatewayConfigError(f"environment variable {config.api_key_env_var} is not set")
        self.config = config
        self.client = JsonHttpClient(
            config.base_url,
            headers={"Authorization": f"Bearer {api_key}"},
            max_retries=config.max_retries,
            timeout=config.timeout_seconds,
            limiter=RateLimiter(config.requests_per_second, clock=clock, sleep=sleep),
            sleep=sleep,
        )

    def chat(self, req: ChatRequest) -> str:
        payload = {
            "model": self.config.model_chat,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        data = self.client.post("chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as e:
            raise TransportError("malformed chat completion response") from e

    def embed(self, texts: Sequence[str]) -> List[np.ndarray]:
        data = self.client.post("embeddings", {"model": self.config.model_embed, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda row: row["index"])
            return [np.asarray(row["embedding"], dtype=float) for row in rows]
        except (KeyError, TypeError) as e:
            raise TransportError("malformed embeddings response") from e


Responder = Callable[[ChatRequest, int], str]


class StubBackend:
    """Deterministic offline backend; same request, same answer, no network."""

    def __init__(self, seed: int = RANDOM_SEED, dimension: int = EMBEDDING_DIMENSION,
                 responders: Mapping[str, Responder] = None):
        self.seed = seed
        self.dimension = dimension
        self._key = hashlib.sha256(str(seed).encode("utf-8")).digest()[:32]
        if responders is None:
            from src.llm.stub import DEFAULT_RESPONDERS
            responders = DEFAULT_RESPONDERS
        self._responders: Dict[str, Responder] = dict(responders)
        self._canned: Dict[str, List[str]] = {}

    def keyed_hash(self, *parts: str) -> int:
        h = hashlib.blake2b(key=self._key, digest_size=8)
        for part in parts:
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return int.from_bytes(h.digest(), "little")

    def register(self, task: str, responder: Responder) -> None:
        self._responders[task] = responder

    def register_canned(self, task: str, responses: Sequence[str]) -> None:
        """Canned templates for `task`; `{{var}}` markers are filled from request variables."""
        if not responses:
            raise ValueError("at least one canned response is required")
        self._canned[task] = list(responses)

    def chat(self, req: ChatRequest) -> str:
        h = self.keyed_hash(req.system_prompt, req.user_prompt)
        canned = self._canned.get(req.task)
        if canned:
            return render_text(canned[h % len(canned)], req.variables)
        responder = self._responders.get(req.task)
        if responder is None:
            return "OK"
        return responder(req, h)

    def token_bucket(self, token: str) -> tuple:
        """(bucket, sign) a token hashes to."""
        value = self.keyed_hash("embed", token)
        return value % self.dimension, (1.0 if (value >> 32) & 1 else -1.0)

    def embed_one(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dimension)
        tokens = analyze(text) or tokenize(text) or ["<empty>"]
        for token in tokens:
            bucket, sign = self.token_bucket(token)
            vector[bucket] += sign
        norm = np.linalg.norm(vector)
        if norm == 0:
            bucket, sign = self.token_bucket("<text>" + text)
            vector[bucket] = sign
            norm = 1.0
        return vector / norm

    def embed(self, texts: Sequence[str]) -> List[np.ndarray]:
        return [self.embed_one(text) for text in texts]


class LLMGateway:
    """Renders templates, builds requests and forwards them to a backend."""

    def __init__(self, backend, prompts: PromptLibrary = None, temperature: float = CHAT_TEMPERATURE,
                 max_tokens: int = CHAT_MAX_TOKENS, seed: Optional[int] = None):
        self.backend = backend
        self.prompts = prompts or PromptLibrary()
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.seed = seed

    @classmethod
    def from_config(cls, config: GatewayConfig, seed: int = RANDOM_SEED, prompts: PromptLibrary = None,
                    **backend_kwargs) -> "LLMGateway":
        if config.backend == "stub":
            backend = StubBackend(seed=seed, dimension=config.embedding_dimension)
        else:
            backend = LiveBackend(config, **backend_kwargs)
        return cls(backend, prompts=prompts, temperature=config.temperature,
                   max_tokens=config.max_tokens, seed=seed)

    @property
    def is_stub(self) -> bool:
        return isinstance(self.backend, StubBackend)

    def chat(self, req: ChatRequest) -> str:
        logger.debug("chat task=%s", req.task)
        return self.backend.chat(req)

    def complete(self, template: str, **variables) -> str:
        """Render the named template and run it as a chat request."""
        system, user = self.prompts.render(template, variables)
        req = ChatRequest(system_prompt=system, user_prompt=user, temperature=self.temperature,
                          max_tokens=self.max_tokens, seed=self.seed, task=template, variables=variables)
        return self.chat(req)

    def embed(self, texts: Sequence[str]) -> List[Embedding]:
        texts = list(texts)
        if not texts:
            raise ValueError("embed needs at least one text")
        return [Embedding(vector) for vector in self.backend.embed(texts)]
