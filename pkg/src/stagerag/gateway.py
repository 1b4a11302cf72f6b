"""Uniform interface to generation models.

One HTTP contract for every local-model server: POST a JSON body
{model, prompt, temperature, max_tokens, stream: false} and read back
{text}. A deterministic mock backend implements the same surface so the
entire engine runs hermetically.
"""

from __future__ import annotations

import re
import threading
import time
from dataclasses import dataclass, field

import httpx

from .errors import (
    EmptyCompletionError,
    ModelNotFoundError,
    TransportError,
)
from .telemetry import TelemetryLog

SCALE_SMALL = "small"
SCALE_LARGE = "large"

# Words the mock refinement step strips; kept short and documented so
# pipeline tests can assert exact refined text.
MOCK_FILLER_WORDS = frozenset(
    {"please", "kindly", "tell", "me", "can", "you", "really", "just"}
)


@dataclass(frozen=True)
class ModelDescriptor:
    model_id: str
    scale_tag: str  # "small" | "large"
    endpoint: str  # URL or "mock"
    capabilities: frozenset = frozenset()


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    temperature: float
    max_tokens: int = 2048
    model_id: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


def validate_models(models: list[ModelDescriptor]) -> None:
    if not any(m.scale_tag == SCALE_SMALL for m in models):
        raise ValueError("at least one small-scale model is required")


def first_small(models: list[ModelDescriptor]) -> ModelDescriptor:
    for m in models:
        if m.scale_tag == SCALE_SMALL:
            return m
    raise ModelNotFoundError("no small-scale model configured")


def _register_hits(text: str, keywords: list[str]) -> int:
    lowered = f" {' '.join(text.lower().split())} "
    return sum(1 for kw in keywords if f" {kw.lower()} " in lowered)


def select_model(
    refined_query: str,
    models: list[ModelDescriptor],
    policy_keywords: list[str],
    technical_keywords: list[str],
) -> ModelDescriptor:
    """Route the synthesis call by keyword register.

    A strictly higher policy-register hit count sends the query to the
    first large model; everything else (including ties and zero overlap)
    falls back to the first small model. Pure in (query, model list).
    """
    if not models:
        raise ModelNotFoundError("empty model list")
    if len(models) == 1:
        return models[0]
    policy_hits = _register_hits(refined_query, policy_keywords)
    technical_hits = _register_hits(refined_query, technical_keywords)
    if policy_hits > technical_hits:
        for m in models:
            if m.scale_tag == SCALE_LARGE:
                return m
    return first_small(models)


class LlmGateway:
    """HTTP gateway with bounded retries and per-call telemetry.

    Retries (default 2, exponential backoff) apply to transport failures
    only; model-level errors surface immediately.
    """

    def __init__(
        self,
        telemetry: TelemetryLog | None = None,
        timeout: float = 120.0,
        max_retries: int = 2,
        backoff_base: float = 0.5,
        in_flight_cap: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        self.telemetry = telemetry or TelemetryLog()
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._semaphore = threading.Semaphore(in_flight_cap)
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def generate(
        self,
        req: GenerationRequest,
        backend: ModelDescriptor,
        stage: str = "",
    ) -> str:
        start = time.monotonic()
        text = self._post_with_retries(req, backend)
        if not text.strip():
            raise EmptyCompletionError(
                f"model {backend.model_id} returned an empty completion"
            )
        self.telemetry.record(
            "llm_call",
            model=backend.model_id,
            stage=stage,
            temperature=req.temperature,
            latency_ms=(time.monotonic() - start) * 1000.0,
            prompt_chars=len(req.prompt),
            completion_chars=len(text),
        )
        return text

    def _post_with_retries(
        self, req: GenerationRequest, backend: ModelDescriptor
    ) -> str:
        payload = {
            "model": req.model_id or backend.model_id,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "stream": False,
        }
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._semaphore:
                    resp = self._client.post(backend.endpoint, json=payload)
                if resp.status_code == 404:
                    raise ModelNotFoundError(
                        f"model {payload['model']} not found at {backend.endpoint}"
                    )
                resp.raise_for_status()
                return resp.json()["text"]
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff_base * (2**attempt))
            except httpx.HTTPStatusError as exc:
                raise TransportError(
                    f"{backend.endpoint} answered {exc.response.status_code}"
                ) from exc
        raise TransportError(
            f"endpoint {backend.endpoint} unreachable after "
            f"{self.max_retries + 1} attempts: {last_exc}"
        ) from last_exc


class MockGateway:
    """Deterministic drop-in for LlmGateway.

    Behavior by prompt family:
      * refinement: echoes the query with filler words removed;
      * decomposition: ``subquery_count`` numbered template lines;
      * article selection: a comma-separated index list ("1,2,...");
      * synthesis: first sentence of each labeled evidence chunk, in
        label order.
    Identical (seed, prompt, temperature) always yields identical bytes.
    """

    REFINE_PREFIX = "Refine: "
    DECOMPOSE_PREFIX = "Decompose into 3-5 perspectives: "
    SELECT_PREFIX = "Select the most relevant articles"
    SYNTH_PREFIX = "Synthesize from:"

    _label_line = re.compile(r"^\[(DB|WEB)_\d+_\d+\]\s*(.*)$")

    def __init__(self, seed: int = 0, subquery_count: int = 3, telemetry=None):
        self.seed = seed
        self.subquery_count = subquery_count
        self.telemetry = telemetry or TelemetryLog()

    def generate(
        self, req: GenerationRequest, backend: ModelDescriptor, stage: str = ""
    ) -> str:
        text = self._complete(req.prompt)
        self.telemetry.record(
            "llm_call",
            model=backend.model_id,
            stage=stage,
            temperature=req.temperature,
            latency_ms=0.0,
            prompt_chars=len(req.prompt),
            completion_chars=len(text),
        )
        return text

    def _complete(self, prompt: str) -> str:
        if prompt.startswith(self.REFINE_PREFIX):
            raw = prompt[len(self.REFINE_PREFIX) :]
            kept = [w for w in raw.split() if w.lower() not in MOCK_FILLER_WORDS]
            return " ".join(kept) or raw
        if prompt.startswith(self.DECOMPOSE_PREFIX):
            refined = prompt[len(self.DECOMPOSE_PREFIX) :].strip()
            lines = [
                f"{i + 1}. {refined} perspective {i + 1}"
                for i in range(self.subquery_count)
            ]
            return "\n".join(lines)
        if prompt.startswith(self.SELECT_PREFIX):
            return ",".join(str(i + 1) for i in range(10))
        if prompt.startswith(self.SYNTH_PREFIX):
            sentences = []
            for line in prompt.splitlines():
                match = self._label_line.match(line.strip())
                if match and match.group(2):
                    chunk_text = match.group(2)
                    dot = chunk_text.find(". ")
                    first = chunk_text if dot < 0 else chunk_text[: dot + 1]
                    if not first.rstrip().endswith((".", "!", "?")):
                        first = first.rstrip() + "."
                    sentences.append(first.strip())
            if sentences:
                return " ".join(sentences)
        return f"mock-completion(seed={self.seed})"
