"""Client for OpenAI-compatible chat-completions and embeddings endpoints.

Responses are cached in an append-only JSON Lines file keyed by a content
hash, so reruns of the same prompts cost nothing and every run can be
audited. Transient failures (429, 5xx, connection errors, timeouts) are
retried with exponential backoff.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx
import numpy as np

from ._rand import digest64
from .textsim import unit

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "CSK_API_KEY"


class GatewayError(Exception):
    retryable = False


class AuthError(GatewayError):
    pass


class RateLimitError(GatewayError):
    retryable = True


class ServerError(GatewayError):
    retryable = True


class GatewayTimeout(GatewayError):
    retryable = True


class MalformedResponse(GatewayError):
    pass


class RequestRejected(GatewayError):
    """Non-retryable 4xx other than auth and rate limiting."""


@dataclass
class GatewayConfig:
    base_url: str
    model_name: str
    api_key_env: str = DEFAULT_API_KEY_ENV
    temperature: float = 0.0
    max_output_tokens: int = 1024
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 4
    embedding_model: str | None = None
    cache_path: str | None = None
    backoff_base: float = 1.0
    backoff_factor: float = 2.0
    jitter: float = 0.1

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def to_dict(self) -> dict:
        # Holds only the *name* of the key variable, never the key.
        return asdict(self)


@dataclass(frozen=True)
class HttpResponse:
    status: int
    body: str


class Transport(Protocol):
    def post(self, url: str, headers: dict[str, str], payload: dict, timeout: float) -> HttpResponse: ...


class HttpxTransport:
    def __init__(self):
        self._client = httpx.Client()

    def post(self, url, headers, payload, timeout):
        try:
            r = self._client.post(url, headers=headers, json=payload, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise GatewayTimeout(f"request to {url} timed out") from exc
        except httpx.TransportError as exc:
            raise ServerError(f"transport error contacting {url}: {type(exc).__name__}") from exc
        return HttpResponse(r.status_code, r.text)

    def close(self):
        self._client.close()


@dataclass
class CompletionRecord:
    prompt_hash: str
    prompt: str
    response: str | None
    model_name: str
    timestamp: str
    kind: str = "chat"
    usage: dict | None = None
    vector: list[float] | None = None


def prompt_hash(prompt: str, model_name: str, temperature: float) -> str:
    return digest64(json.dumps(["chat", model_name, float(temperature), prompt], ensure_ascii=False))


def embedding_hash(text: str, model_name: str) -> str:
    return digest64(json.dumps(["embedding", model_name, text], ensure_ascii=False))


class ResponseCache:
    """Append-only JSONL cache; later records win on key collision."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._records: dict[str, CompletionRecord] = {}
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = CompletionRecord(**json.loads(line))
                        self._records[rec.prompt_hash] = rec

    def get(self, key: str) -> CompletionRecord | None:
        with self._lock:
            return self._records.get(key)

    def put(self, rec: CompletionRecord) -> None:
        with self._lock:
            self._records[rec.prompt_hash] = rec
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._records)


@dataclass
class BatchResult:
    responses: list[str | None]
    errors: dict[int, GatewayError] = field(default_factory=dict)

    @property
    def failed_indices(self) -> list[int]:
        return sorted(self.errors)

    @property
    def ok(self) -> bool:
        return not self.errors


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Gateway:
    def __init__(
        self,
        cfg: GatewayConfig,
        transport: Transport | None = None,
        cache: ResponseCache | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.cfg = cfg
        self.transport = transport or HttpxTransport()
        self.cache = cache if cache is not None else ResponseCache(cfg.cache_path)
        self.sleep = sleep
        self.rng = rng or random.Random(0)
        self._rng_lock = threading.Lock()
        self.network_calls = 0
        self._calls_lock = threading.Lock()

    # -- transport -------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.cfg.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.cfg.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def backoff(self, attempt: int) -> float:
        """Delay before retry number ``attempt + 1``: base * factor**attempt,
        scaled by a uniform jitter of +/- ``cfg.jitter``."""
        with self._rng_lock:
            j = self.rng.uniform(-self.cfg.jitter, self.cfg.jitter)
        return self.cfg.backoff_base * self.cfg.backoff_factor ** attempt * (1 + j)

    def _post(self, path: str, payload: dict) -> dict:
        url = self.cfg.base_url.rstrip("/") + path
        headers = self._headers()
        attempt = 0
        while True:
            try:
                with self._calls_lock:
                    self.network_calls += 1
                resp = self.transport.post(url, headers, payload, self.cfg.timeout)
                return self._check(resp)
            except GatewayError as exc:
                if not exc.retryable or attempt >= self.cfg.max_retries:
                    raise
                delay = self.backoff(attempt)
                log.info("retrying %s after %s (attempt %d, %.2fs)", path, type(exc).__name__, attempt + 1, delay)
                self.sleep(delay)
                attempt += 1

    @staticmethod
    def _check(resp: HttpResponse) -> dict:
        if resp.status in (401, 403):
            raise AuthError(f"authentication failed (HTTP {resp.status})")
        if resp.status == 429:
            raise RateLimitError("rate limited (HTTP 429)")
        if resp.status >= 500:
            raise ServerError(f"server error (HTTP {resp.status})")
        if resp.status >= 400:
            raise RequestRejected(f"request rejected (HTTP {resp.status}): {resp.body[:200]}")
        try:
            return json.loads(resp.body)
        except json.JSONDecodeError as exc:
            raise MalformedResponse("response body is not JSON") from exc

    # -- public API ------------------------------------------------------

    def complete(self, prompt: str) -> str:
        cfg = self.cfg
        key = prompt_hash(prompt, cfg.model_name, cfg.temperature)
        hit = self.cache.get(key)
        if hit is not None and hit.response is not None:
            return hit.response
        payload = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
        }
        body = self._post("/chat/completions", payload)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("no choices[0].message.content in response") from exc
        if not isinstance(text, str):
            raise MalformedResponse("message content is not a string")
        self.cache.put(CompletionRecord(key, prompt, text, cfg.model_name, _now(), usage=body.get("usage")))
        return text

    def complete_batch(self, prompts: Sequence[str]) -> BatchResult:
        """Run prompts with at most ``max_in_flight`` requests at once.

        Results line up with *prompts*; a failure is recorded at its index and
        does not stop the rest.
        """
        if not prompts:
            raise ValueError("complete_batch needs at least one prompt")
        result = BatchResult([None] * len(prompts))

        def run(i: int) -> None:
            try:
                result.responses[i] = self.complete(prompts[i])
            except GatewayError as exc:
                result.errors[i] = exc

        with ThreadPoolExecutor(max_workers=self.cfg.max_in_flight) as pool:
            list(pool.map(run, range(len(prompts))))
        return result

    def embed_remote(self, texts: Sequence[str]) -> list[np.ndarray]:
        cfg = self.cfg
        model = cfg.embedding_model or cfg.model_name
        out: list[np.ndarray | None] = [None] * len(texts)
        missing: dict[str, list[int]] = {}
        for i, t in enumerate(texts):
            hit = self.cache.get(embedding_hash(t, model))
            if hit is not None and hit.vector is not None:
                out[i] = unit(hit.vector)
            else:
                missing.setdefault(t, []).append(i)
        if missing:
            batch = list(missing)
            body = self._post("/embeddings", {"model": model, "input": batch})
            try:
                data = sorted(body["data"], key=lambda d: d.get("index", 0))
                vectors = [d["embedding"] for d in data]
            except (KeyError, TypeError, AttributeError) as exc:
                raise MalformedResponse("no data[].embedding in response") from exc
            if len(vectors) != len(batch):
                raise MalformedResponse(f"{len(vectors)} embeddings returned for {len(batch)} inputs")
            for t, vec in zip(batch, vectors):
                try:
                    v = unit(vec)
                except (ValueError, TypeError) as exc:
                    raise MalformedResponse(str(exc)) from exc
                self.cache.put(CompletionRecord(
                    embedding_hash(t, model), t, None, model, _now(), kind="embedding", vector=v.tolist(),
                ))
                for i in missing[t]:
                    out[i] = v
        return out  # type: ignore[return-value]


class RemoteEmbedder:
    name = "remote"

    def __init__(self, gateway: Gateway):
        self.gateway = gateway

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self.gateway.embed_remote(texts) if texts else []


def complete(prompt: str, cfg: GatewayConfig, **kwargs) -> str:
    return Gateway(cfg, **kwargs).complete(prompt)


def complete_batch(prompts: Sequence[str], cfg: GatewayConfig, **kwargs) -> BatchResult:
    return Gateway(cfg, **kwargs).complete_batch(prompts)


def embed_remote(texts: Sequence[str], cfg: GatewayConfig, **kwargs) -> list[np.ndarray]:
    return Gateway(cfg, **kwargs).embed_remote(texts)
