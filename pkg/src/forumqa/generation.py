"""Chat-completion and embedding provider clients, plus offline stubs.

The wire contract is the common OpenAI-compatible JSON shape:

    POST {base_url}/chat/completions
        {"model", "messages": [{"role", "content"}], "temperature",
         "top_p", "max_tokens"}  (+ "top_k" as an extension when enabled)
        -> {"choices": [{"message": {"content": ...}}]}
    POST {base_url}/embeddings
        {"model", "input": [str]} -> {"data": [{"embedding": [float]}]}

Any server speaking this shape plugs in; the stubs run the whole pipeline
offline and deterministically.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence
from urllib.parse import urlparse

import requests

STUB_EMBEDDING_DIM = 256
RETRYABLE_STATUSES = (429, 500, 502, 503, 504)

_TOKEN = re.compile(r"[a-z0-9]+")


class GenerationError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class PrivacyError(RuntimeError):
    pass


class PromptTooLongError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationParams:
    max_length: int = 2048
    max_new_tokens: int = 1024
    top_p: float = 1.0
    top_k: int = 50
    temperature: float = 0.3

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.max_new_tokens >= self.max_length:
            raise ValueError("max_new_tokens must be < max_length")


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    model: str
    api_key_env: str = ""
    timeout: float = 30.0
    max_attempts: int = 3
    backoff_seconds: float = 0.5
    send_top_k: bool = True
    trusted_hosts: tuple[str, ...] = ()

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


def _requests_transport(url: str, payload: dict, headers: dict, timeout: float):
    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    try:
        body = resp.json()
    except ValueError:
        body = {}
    return resp.status_code, body


def estimate_tokens(text: str) -> int:
    """Crude but stable budget proxy: one token per 4 characters, rounded up."""
    return math.ceil(len(text) / 4)


def check_prompt_budget(text: str, params: GenerationParams) -> None:
    budget = params.max_length - params.max_new_tokens
    estimated = estimate_tokens(text)
    if estimated > budget:
        raise PromptTooLongError(
            f"prompt estimated at {estimated} tokens exceeds the "
            f"{budget}-token budget (max_length {params.max_length} - "
            f"max_new_tokens {params.max_new_tokens})"
        )


class _HttpClientBase:
    def __init__(self, config: ProviderConfig, transport=None, max_concurrency: int = 4):
        self.config = config
        self.transport = transport or _requests_transport
        self.max_concurrency = max_concurrency
        self.host = urlparse(config.base_url).hostname or ""
        self._api_key = os.environ.get(config.api_key_env, "") if config.api_key_env else ""

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        last_status = None
        last_error = None
        for attempt in range(1, self.config.max_attempts + 1):
            try:
                status, body = self.transport(url, payload, self._headers(), self.config.timeout)
            except Exception as exc:  # network-level failure
                last_error, last_status = exc, None
            else:
                if status == 200:
                    return body
                last_error, last_status = None, status
                if status not in RETRYABLE_STATUSES:
                    raise GenerationError(
                        f"request to {url} failed with status {status}",
                        status=status, attempts=attempt,
                    )
            if attempt < self.config.max_attempts:
                time.sleep(self.config.backoff_seconds * 2 ** (attempt - 1))
        detail = f"status {last_status}" if last_status is not None else f"error {last_error!r}"
        raise GenerationError(
            f"request to {url} failed after {self.config.max_attempts} attempts ({detail})",
            status=last_status, attempts=self.config.max_attempts,
        )


class HttpChatClient(_HttpClientBase):
    """Chat completions against an OpenAI-compatible endpoint."""

    def complete(self, prompt_text: str, params: GenerationParams,
                 anonymized: bool = True) -> str:
        if not anonymized and self.host not in self.config.trusted_hosts:
            raise PrivacyError(
                f"refusing to send non-anonymized content to untrusted host '{self.host}'"
            )
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_new_tokens,
        }
        if self.config.send_top_k:
            payload["top_k"] = params.top_k
        body = self._post("/chat/completions", payload)
        choices = body.get("choices") or []
        content = (choices[0].get("message") or {}).get("content") if choices else None
        if not content:
            raise GenerationError("empty completion", attempts=1)
        return content


class HttpEmbeddingClient(_HttpClientBase):
    """Embeddings against an OpenAI-compatible endpoint."""

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        body = self._post("/embeddings", {"model": self.config.model, "input": list(texts)})
        data = body.get("data") or []
        if len(data) != len(texts):
            raise GenerationError(
                f"expected {len(texts)} embeddings, got {len(data)}", attempts=1
            )
        data = sorted(data, key=lambda d: d.get("index", 0))
        return [list(map(float, d["embedding"])) for d in data]


class StubChatClient:
    """Deterministic offline chat provider.

    mode="echo" replies with the prompt tail; mode="judge" replies with a
    rubric line ("- <Metric>: <0|1|2>") whose score is a stable hash of the
    prompt, so judge parsing gets exercised across all three levels.
    """

    def __init__(self, mode: str = "echo", tail_chars: int = 200):
        if mode not in ("echo", "judge"):
            raise ValueError(f"unknown stub mode '{mode}'")
        self.mode = mode
        self.tail_chars = tail_chars

    def complete(self, prompt_text: str, params: GenerationParams,
                 anonymized: bool = True) -> str:
        if self.mode == "echo":
            return prompt_text[-self.tail_chars:]
        lines = [ln for ln in prompt_text.splitlines() if ln.startswith("- ")]
        metric = lines[-1][2:].strip() if lines else "Score"
        digest = hashlib.md5(prompt_text.encode("utf-8")).hexdigest()
        return f"- {metric}: {int(digest[:8], 16) % 3}"


class StubEmbeddingClient:
    """Hashed bag-of-words embedder: deterministic across runs and platforms.

    Tokens are hashed (md5, not Python's salted hash) into 256 buckets,
    counted, and L2-normalized, so identical texts embed identically and
    word-permutation rephrasings collide on purpose.
    """

    dim = STUB_EMBEDDING_DIM

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        vectors = []
        for text in texts:
            counts = [0.0] * self.dim
            tokens = _TOKEN.findall(text.lower()) or [""]
            for tok in tokens:
                bucket = int.from_bytes(hashlib.md5(tok.encode("utf-8")).digest()[:4], "big")
                counts[bucket % self.dim] += 1.0
            norm = math.sqrt(sum(c * c for c in counts))
            vectors.append([c / norm for c in counts])
        return vectors


def generate_answer(provider, prompt, params: GenerationParams | None = None,
                    anonymized: bool = True) -> str:
    """Render-agnostic single completion with the token-budget guard."""
    params = params or GenerationParams()
    text = prompt.rendered if hasattr(prompt, "rendered") else str(prompt)
    check_prompt_budget(text, params)
    return provider.complete(text, params, anonymized=anonymized)


def generate_many(provider, prompts: Sequence, params: GenerationParams | None = None,
                  anonymized: bool = True, max_in_flight: int = 4) -> list[str]:
    """Bounded-concurrency batch completion, order preserved."""
    params = params or GenerationParams()
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        futures = [
            pool.submit(generate_answer, provider, p, params, anonymized)
            for p in prompts
        ]
        return [f.result() for f in futures]


def embed_texts(provider, texts: Sequence[str]) -> list[list[float]]:
    """One vector per input text, order preserved, uniform dimension."""
    if not texts:
        raise ValueError("no texts to embed")
    vectors = provider.embed(list(texts))
    if len(vectors) != len(texts):
        raise ValueError(f"provider returned {len(vectors)} vectors for {len(texts)} texts")
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise ValueError(f"embedding dimension drift within batch: {sorted(dims)}")
    return vectors
