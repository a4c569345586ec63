"""Transport to LLMs and deterministic in-process substitutes.

The wire client speaks the OpenAI-compatible JSON protocol: chat prompts
POST to `{endpoint}/v1/chat/completions`, completion prompts to
`{endpoint}/v1/completions`. The API key, when needed, comes from the
PERMURANK_API_KEY environment variable and is sent as a bearer token.

Retry policy: transport failures, timeouts, HTTP 5xx, and HTTP 429 are
retried with jittered exponential backoff up to max_retries; any other
4xx fails immediately. A request that needs token log-probabilities but
targets a chat prompt raises CapabilityError, since the chat protocol
offers no way to score an echoed prompt suffix.

The mock oracle is a drop-in model for tests and offline pipelines: it
ranks a permutation prompt's window by hidden truth scores and can inject
duplicate, drop, and rejection faults at seeded rates.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Protocol, Union

import httpx

from .prompting import RenderedPrompt
from .types import Judgments

API_KEY_ENV_VAR = "PERMURANK_API_KEY"

REJECTION_TEXT = "None of the provided passages is directly relevant to the query"


class GatewayError(Exception):
    """Base class for everything the gateway can raise."""


class TransportError(GatewayError):
    """Connection or timeout failure that survived all retries."""


class HttpStatusError(GatewayError):
    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body[:500]}")
        self.status = status
        self.body = body


class CapabilityError(GatewayError):
    """The endpoint or model cannot satisfy the request (e.g. logprobs)."""


@dataclass(frozen=True)
class GatewayConfig:
    endpoint_url: str
    model_name: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    request_timeout: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if not self.endpoint_url:
            raise ValueError("endpoint_url must be non-empty")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    token_logprobs: Optional[tuple[tuple[str, float], ...]] = None
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.token_logprobs is not None:
            object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
            for token, logprob in self.token_logprobs:
                if logprob > 0:
                    raise ValueError(f"logprob must be <= 0, got {logprob} for token {token!r}")


class UsageLedger:
    """Thread-safe per-query token and request counters."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._tokens: dict[str, int] = {}
        self._requests: dict[str, int] = {}

    def record(self, query_id: str, tokens: int, requests: int = 1) -> None:
        with self._lock:
            self._tokens[query_id] = self._tokens.get(query_id, 0) + tokens
            self._requests[query_id] = self._requests.get(query_id, 0) + requests

    def totals(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {
                qid: {"tokens": self._tokens[qid], "requests": self._requests[qid]}
                for qid in self._tokens
            }

    def grand_totals(self) -> dict[str, int]:
        with self._lock:
            return {
                "tokens": sum(self._tokens.values()),
                "requests": sum(self._requests.values()),
            }


class Gateway(Protocol):
    ledger: UsageLedger

    def complete(
        self,
        prompt: RenderedPrompt,
        want_logprobs: bool = False,
        query_id: Optional[str] = None,
    ) -> LlmResponse: ...


def _clamp_logprob(value: Optional[float]) -> float:
    # Some servers report tiny positive logprobs from rounding; clamp at 0.
    if value is None:
        return 0.0
    return min(float(value), 0.0)


class OpenAiGateway:
    """HTTP client for OpenAI-compatible endpoints with bounded concurrency."""

    def __init__(
        self,
        config: GatewayConfig,
        *,
        client: Optional[httpx.Client] = None,
        backoff_base: float = 1.0,
        sleep: Callable[[float], None] = time.sleep,
        rng: Optional[random.Random] = None,
    ):
        self.config = config
        self.ledger = UsageLedger()
        self._client = client if client is not None else httpx.Client()
        self._backoff_base = backoff_base
        self._sleep = sleep
        self._rng = rng if rng is not None else random.Random()
        self._slots = threading.Semaphore(config.max_in_flight)

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "OpenAiGateway":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def complete(
        self,
        prompt: RenderedPrompt,
        want_logprobs: bool = False,
        query_id: Optional[str] = None,
    ) -> LlmResponse:
        if prompt.messages is not None and want_logprobs:
            raise CapabilityError(
                "token log-probabilities are unavailable over the chat protocol; "
                "use a completion-style instruction"
            )
        url, payload = self._build_request(prompt, want_logprobs)
        with self._slots:
            data = self._post_with_retries(url, payload)
        response = self._parse_response(prompt, data, want_logprobs)
        self.ledger.record(
            query_id or "", response.prompt_tokens + response.completion_tokens, 1
        )
        return response

    def _build_request(self, prompt: RenderedPrompt, want_logprobs: bool) -> tuple[str, dict]:
        config = self.config
        base = config.endpoint_url.rstrip("/")
        if prompt.messages is not None:
            payload: dict = {
                "model": config.model_name,
                "messages": [{"role": m.role, "content": m.content} for m in prompt.messages],
                "temperature": config.temperature,
                "max_tokens": config.max_output_tokens,
            }
            return f"{base}/v1/chat/completions", payload
        payload = {
            "model": config.model_name,
            "prompt": prompt.text,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        }
        if want_logprobs:
            payload["logprobs"] = 1
            if prompt.echo_suffix is not None:
                # Scoring a known suffix: echo the prompt, generate nothing.
                payload["echo"] = True
                payload["max_tokens"] = 0
        return f"{base}/v1/completions", payload

    def _post_with_retries(self, url: str, payload: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV_VAR)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Optional[str] = None
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(self._backoff_base * (2 ** (attempt - 1)) * self._rng.uniform(0.5, 1.5))
            try:
                response = self._client.post(
                    url, json=payload, headers=headers, timeout=self.config.request_timeout
                )
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"HTTP {response.status_code}: {response.text[:200]}"
                continue
            if not 200 <= response.status_code < 300:
                raise HttpStatusError(response.status_code, response.text)
            try:
                return response.json()
            except (json.JSONDecodeError, ValueError) as exc:
                raise GatewayError(f"invalid JSON from {url}: {exc}") from None
        raise TransportError(
            f"{url} failed after {self.config.max_retries + 1} attempts: {last_error}"
        )

    def _parse_response(
        self, prompt: RenderedPrompt, data: dict, want_logprobs: bool
    ) -> LlmResponse:
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError):
            raise GatewayError(f"response has no choices: {json.dumps(data)[:300]}") from None

        if prompt.messages is not None:
            text = (choice.get("message") or {}).get("content") or ""
        else:
            text = choice.get("text") or ""

        token_logprobs: Optional[tuple[tuple[str, float], ...]] = None
        if want_logprobs:
            block = choice.get("logprobs")
            if not block or block.get("token_logprobs") is None:
                raise CapabilityError(
                    f"endpoint returned no token log-probabilities for model "
                    f"{self.config.model_name}"
                )
            tokens = block.get("tokens") or []
            logprobs = block.get("token_logprobs") or []
            offsets = block.get("text_offset")
            pairs = [
                (str(token), _clamp_logprob(lp)) for token, lp in zip(tokens, logprobs)
            ]
            if prompt.echo_suffix is not None and prompt.text is not None:
                if offsets is None:
                    raise CapabilityError("endpoint returned no text offsets for echo scoring")
                cut = len(prompt.text) - len(prompt.echo_suffix)
                pairs = [pair for pair, off in zip(pairs, offsets) if off >= cut]
            token_logprobs = tuple(pairs)

        usage = data.get("usage") or {}
        return LlmResponse(
            text=text,
            token_logprobs=token_logprobs,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


def _derived_rng(seed: int, query_id: str, call_index: int) -> random.Random:
    material = f"{seed}:{query_id}:{call_index}".encode()
    return random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))


class MockOracleGateway:
    """Deterministic stand-in model that ranks windows by hidden truth.

    `truth` is either a Judgments (unjudged docids read as grade 0) or a
    strict score map keyed by (query_id, docid), where unknown docids are
    an error. Output order is descending truth score, ties broken by
    ascending identifier, formatted as `[i] > [j] > ...`.

    Fault injection, all seeded: with probability reject_rate the whole
    window is refused with the canonical rejection sentence; otherwise
    each identifier is dropped with drop_rate and, when emitted, repeated
    once with duplicate_rate. Randomness is derived per (query, call) so
    results do not depend on scheduling across queries.
    """

    def __init__(
        self,
        truth: Union[Judgments, Mapping[tuple[str, str], float]],
        duplicate_rate: float = 0.0,
        drop_rate: float = 0.0,
        reject_rate: float = 0.0,
        seed: int = 0,
    ):
        for name, rate in (
            ("duplicate_rate", duplicate_rate),
            ("drop_rate", drop_rate),
            ("reject_rate", reject_rate),
        ):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if not isinstance(truth, Judgments):
            for key, score in truth.items():
                if math.isnan(float(score)):
                    raise ValueError(f"truth score for {key} is NaN")
        self._truth = truth
        self._duplicate_rate = duplicate_rate
        self._drop_rate = drop_rate
        self._reject_rate = reject_rate
        self._seed = seed
        self._lock = threading.Lock()
        self._calls: dict[str, int] = {}
        self.ledger = UsageLedger()

    def _score(self, query_id: str, docid: str) -> float:
        if isinstance(self._truth, Judgments):
            return float(self._truth.grade(query_id, docid))
        try:
            return float(self._truth[(query_id, docid)])
        except KeyError:
            raise ValueError(f"mock oracle has no truth score for docid {docid!r} "
                             f"(query {query_id!r})") from None

    def complete(
        self,
        prompt: RenderedPrompt,
        want_logprobs: bool = False,
        query_id: Optional[str] = None,
    ) -> LlmResponse:
        if want_logprobs:
            raise CapabilityError("mock oracle serves permutation prompts only")
        if prompt.identifier_map is None:
            raise ValueError("mock oracle requires a permutation prompt")
        if query_id is None:
            raise ValueError("mock oracle requires a query_id")

        with self._lock:
            call_index = self._calls.get(query_id, 0)
            self._calls[query_id] = call_index + 1
        rng = _derived_rng(self._seed, query_id, call_index)

        scores = [self._score(query_id, docid) for docid in prompt.identifier_map]
        if rng.random() < self._reject_rate:
            text = REJECTION_TEXT
        else:
            order = sorted(range(1, len(scores) + 1), key=lambda i: (-scores[i - 1], i))
            emitted: list[int] = []
            for ident in order:
                if rng.random() < self._drop_rate:
                    continue
                emitted.append(ident)
                if rng.random() < self._duplicate_rate:
                    emitted.append(ident)
            text = " > ".join(f"[{i}]" for i in emitted)

        prompt_tokens = self._prompt_token_estimate(prompt)
        completion_tokens = len(text.split())
        self.ledger.record(query_id, prompt_tokens + completion_tokens, 1)
        return LlmResponse(
            text=text, prompt_tokens=prompt_tokens, completion_tokens=completion_tokens
        )

    @staticmethod
    def _prompt_token_estimate(prompt: RenderedPrompt) -> int:
        if prompt.messages is not None:
            return sum(len(m.content.split()) for m in prompt.messages)
        return len((prompt.text or "").split())
