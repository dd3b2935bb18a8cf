"""Uniform interface to text-generation providers with cost accounting.

The scripted mock provider replays canned responses keyed by
``(tag, call ordinal)`` and is the backend for every test in the suite:
one script fixture drives a whole pipeline run deterministically. Cost
arithmetic uses Decimal throughout so ledgers stay exact across any number
of accumulations.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import httpx

from .errors import (
    AuthFailure,
    ProviderUnavailable,
    ResponseTooLarge,
    TransientProviderFailure,
)

TRANSIENT_FAILURE_SENTINEL = "<<TRANSIENT_FAILURE>>"


@dataclass(frozen=True)
class GenerationRequest:
    system_text: str
    user_text: str
    tag: str
    temperature: float = 0.0
    max_output_chars: int = 100_000

    def __post_init__(self):
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError("temperature must be in [0, 2]")
        if self.max_output_chars < 1:
            raise ValueError("max_output_chars must be positive")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    input_tokens: int
    output_tokens: int
    cost_usd: Decimal
    provider_id: str
    latency_ms: float
    tag: str


@dataclass(frozen=True)
class RateCard:
    """Provider pricing in USD per 1000 tokens."""

    usd_per_1k_input: Decimal = Decimal("0.003")
    usd_per_1k_output: Decimal = Decimal("0.015")

    def cost(self, input_tokens: int, output_tokens: int) -> Decimal:
        return (Decimal(input_tokens) * self.usd_per_1k_input
                + Decimal(output_tokens) * self.usd_per_1k_output) / Decimal(1000)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff_base_s: float = 0.1
    backoff_factor: float = 2.0


def _approx_tokens(text: str) -> int:
    # chars/4: stable, provider-agnostic approximation for accounting
    return math.ceil(len(text) / 4)


class Provider:
    """Base provider: retry loop, size check, and accounting."""

    provider_id = "base"

    def __init__(self, rate_card: RateCard = RateCard(),
                 retry: RetryPolicy = RetryPolicy(), sleep=time.sleep):
        self.rate_card = rate_card
        self.retry = retry
        self._sleep = sleep

    def _call(self, request: GenerationRequest) -> str:
        raise NotImplementedError

    def generate(self, request: GenerationRequest) -> GenerationResult:
        started = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.retry.attempts):
            try:
                text = self._call(request)
                break
            except TransientProviderFailure as e:
                last_error = e
                if attempt + 1 < self.retry.attempts:
                    self._sleep(self.retry.backoff_base_s
                                * self.retry.backoff_factor ** attempt)
        else:
            raise ProviderUnavailable(
                f"{self.provider_id}: still failing after "
                f"{self.retry.attempts} attempts") from last_error
        if len(text) > request.max_output_chars:
            raise ResponseTooLarge(
                f"response of {len(text)} chars exceeds cap {request.max_output_chars}")
        input_tokens = _approx_tokens(request.system_text + request.user_text)
        output_tokens = _approx_tokens(text)
        return GenerationResult(
            text=text,
            input_tokens=input_tokens,
            output_tokens=output_tokens,
            cost_usd=self.rate_card.cost(input_tokens, output_tokens),
            provider_id=self.provider_id,
            latency_ms=(time.monotonic() - started) * 1000.0,
            tag=request.tag,
        )


class MockProvider(Provider):
    """Replays scripted responses verbatim, in order, per tag.

    Scripts come either from an in-memory mapping ``{tag: [response, ...]}``
    or from a directory laid out as ``mock_script/<tag>/<ordinal>.txt``.
    A script entry equal to TRANSIENT_FAILURE_SENTINEL raises a retryable
    failure (and consumes its slot), which exercises the retry loop.
    """

    provider_id = "mock"

    def __init__(self, scripts: dict[str, list[str]] | None = None,
                 script_dir: str | Path | None = None, **kwargs):
        kwargs.setdefault("retry", RetryPolicy(backoff_base_s=0.0))
        super().__init__(**kwargs)
        self._scripts: dict[str, list[str]] = {k: list(v) for k, v in (scripts or {}).items()}
        if script_dir is not None:
            self._load_dir(Path(script_dir))
        self._cursors: dict[str, int] = {}
        self._lock = threading.Lock()
        self.call_log: list[dict] = []

    def _load_dir(self, root: Path) -> None:
        for tag_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            entries = sorted(tag_dir.glob("*.txt"), key=lambda p: int(p.stem))
            self._scripts.setdefault(tag_dir.name, []).extend(
                p.read_text() for p in entries)

    def remaining(self, tag: str) -> int:
        with self._lock:
            return len(self._scripts.get(tag, ())) - self._cursors.get(tag, 0)

    def fast_forward(self, tag_counts: dict[str, int]) -> None:
        """Skip script entries already consumed by an interrupted run, so a
        resumed pipeline replays the same script from the same position."""
        with self._lock:
            for tag, count in tag_counts.items():
                self._cursors[tag] = max(self._cursors.get(tag, 0), count)

    def _call(self, request: GenerationRequest) -> str:
        with self._lock:
            script = self._scripts.get(request.tag)
            ordinal = self._cursors.get(request.tag, 0)
            if not script or ordinal >= len(script):
                self.call_log.append({"tag": request.tag, "ordinal": ordinal,
                                      "outcome": "exhausted"})
                raise ProviderUnavailable(
                    f"mock script for tag {request.tag!r} exhausted at {ordinal}")
            self._cursors[request.tag] = ordinal + 1
            entry = script[ordinal]
            if entry == TRANSIENT_FAILURE_SENTINEL:
                self.call_log.append({"tag": request.tag, "ordinal": ordinal,
                                      "outcome": "transient_failure"})
                raise TransientProviderFailure("scripted transient failure")
            self.call_log.append({"tag": request.tag, "ordinal": ordinal,
                                  "outcome": "ok"})
            return entry


class HttpProvider(Provider):
    """Adapter for an HTTP chat-completion endpoint."""

    def __init__(self, base_url: str, model: str,
                 api_key_env: str = "FABFLOW_API_KEY", timeout_s: float = 120.0,
                 client: httpx.Client | None = None, **kwargs):
        super().__init__(**kwargs)
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.provider_id = f"http:{model}"
        self._client = client or httpx.Client(timeout=timeout_s)

    def _call(self, request: GenerationRequest) -> str:
        key = os.environ.get(self.api_key_env, "")
        payload = {
            "model": self.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
        }
        try:
            response = self._client.post(
                f"{self.base_url}/chat/completions", json=payload,
                headers={"Authorization": f"Bearer {key}"})
        except httpx.TransportError as e:
            raise TransientProviderFailure(str(e)) from e
        if response.status_code in (401, 403):
            raise AuthFailure(f"provider rejected credentials ({response.status_code})")
        if response.status_code >= 500 or response.status_code == 429:
            raise TransientProviderFailure(f"HTTP {response.status_code}")
        response.raise_for_status()
        body = response.json()
        return body["choices"][0]["message"]["content"]


@dataclass(frozen=True)
class CostSummary:
    total_usd: Decimal
    per_tag: dict

    def to_dict(self) -> dict:
        return {"total_usd": str(self.total_usd),
                "per_tag": {k: str(v) for k, v in sorted(self.per_tag.items())}}


def generate(provider: Provider, request: GenerationRequest) -> GenerationResult:
    return provider.generate(request)


def accumulate_cost(results: list[GenerationResult]) -> CostSummary:
    total = Decimal(0)
    per_tag: dict[str, Decimal] = {}
    for result in results:
        total += result.cost_usd
        per_tag[result.tag] = per_tag.get(result.tag, Decimal(0)) + result.cost_usd
    return CostSummary(total_usd=total, per_tag=per_tag)
