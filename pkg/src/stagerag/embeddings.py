"""Text-to-vector encoding with ranked provider selection and a total fallback.

Providers are tried in rank order; a provider is usable when its liveness
probe succeeds and its accelerator requirement is met. If every provider
fails, the built-in hashing encoder takes over, so selection never raises.
All vectors are unit-normalized at encode time: downstream similarity is
always a plain dot product.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import httpx
import numpy as np

from .errors import DimensionMismatchError, TransportError

FALLBACK_MODEL_ID = "hashing-fallback"
DEFAULT_FALLBACK_DIM = 256


@dataclass(frozen=True)
class EmbeddingVector:
    values: np.ndarray
    model_id: str

    @property
    def dimension(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class EmbeddingProviderDescriptor:
    model_id: str
    rank: int
    endpoint: str  # URL, "mock", or "builtin" for the fallback
    requires_accelerator: bool = False


def cosine_similarity(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dimension != b.dimension:
        raise DimensionMismatchError(
            f"cosine over mismatched dimensions {a.dimension} != {b.dimension}"
        )
    na = float(np.linalg.norm(a.values))
    nb = float(np.linalg.norm(b.values))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a.values, b.values) / (na * nb))


class HashingEncoder:
    """Deterministic character-trigram feature hashing, L2-normalized.

    Zero-dependency fallback so retrieval and citation stay testable with
    no model server. Quality-degraded by construction; documented as such.
    """

    def __init__(self, dimension: int = DEFAULT_FALLBACK_DIM):
        self.dimension = dimension
        self.model_id = FALLBACK_MODEL_ID

    def _ngrams(self, text: str):
        norm = " ".join(text.lower().split())
        padded = f" {norm} "
        for i in range(max(1, len(padded) - 2)):
            yield padded[i : i + 3]

    def encode(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ValueError("cannot encode empty text")
        vec = np.zeros(self.dimension, dtype=np.float64)
        for gram in self._ngrams(text):
            digest = hashlib.md5(gram.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return EmbeddingVector(values=vec / norm, model_id=self.model_id)

    def encode_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        return [self.encode(t) for t in texts]


class HttpEncoder:
    """Client for the embedding provider API:
    POST {model, input: [texts]} -> {embeddings: [[reals]]}.
    """

    def __init__(
        self,
        descriptor: EmbeddingProviderDescriptor,
        timeout: float = 30.0,
        batch_size: int = 32,
        transport: httpx.BaseTransport | None = None,
    ):
        self.descriptor = descriptor
        self.model_id = descriptor.model_id
        self.batch_size = batch_size
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._dimension: int | None = None

    def encode(self, text: str) -> EmbeddingVector:
        return self.encode_batch([text])[0]

    def encode_batch(self, texts: list[str]) -> list[EmbeddingVector]:
        for text in texts:
            if not text.strip():
                raise ValueError("cannot encode empty text")
        out: list[EmbeddingVector] = []
        for i in range(0, len(texts), self.batch_size):
            out.extend(self._encode_chunk(texts[i : i + self.batch_size]))
        return out

    def _encode_chunk(self, texts: list[str]) -> list[EmbeddingVector]:
        try:
            resp = self._client.post(
                self.descriptor.endpoint,
                json={"model": self.model_id, "input": texts},
            )
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(
                f"embedding provider {self.model_id}: {exc}"
            ) from exc
        rows = resp.json()["embeddings"]
        vectors = []
        for row in rows:
            arr = np.asarray(row, dtype=np.float64)
            if self._dimension is None:
                self._dimension = arr.shape[0]
            elif arr.shape[0] != self._dimension:
                raise DimensionMismatchError(
                    f"provider {self.model_id} switched dimension "
                    f"{self._dimension} -> {arr.shape[0]} within one session"
                )
            norm = np.linalg.norm(arr)
            if norm > 0:
                arr = arr / norm
            vectors.append(EmbeddingVector(values=arr, model_id=self.model_id))
        return vectors


def _http_probe(descriptor: EmbeddingProviderDescriptor, timeout: float) -> bool:
    try:
        httpx.post(
            descriptor.endpoint,
            json={"model": descriptor.model_id, "input": ["ping"]},
            timeout=timeout,
        ).raise_for_status()
        return True
    except httpx.HTTPError:
        return False


def select_embedding_provider(
    ranking: list[EmbeddingProviderDescriptor],
    accelerator_available: bool = False,
    probe=None,
    probe_timeout: float = 2.0,
    fallback_dimension: int = DEFAULT_FALLBACK_DIM,
) -> EmbeddingProviderDescriptor:
    """Return the most-preferred usable provider, falling back to the
    built-in hashing encoder descriptor when every candidate fails.

    ``probe`` is a predicate over a descriptor; the default issues a tiny
    live encode request. Total: never raises.
    """
    if probe is None:
        probe = lambda d: _http_probe(d, probe_timeout)  # noqa: E731
    for descriptor in sorted(ranking, key=lambda d: d.rank):
        if descriptor.requires_accelerator and not accelerator_available:
            continue
        if descriptor.endpoint in ("builtin", "mock"):
            return descriptor
        try:
            if probe(descriptor):
                return descriptor
        except Exception:
            continue
    return EmbeddingProviderDescriptor(
        model_id=FALLBACK_MODEL_ID,
        rank=len(ranking) + 1,
        endpoint="builtin",
        requires_accelerator=False,
    )


def build_encoder(
    descriptor: EmbeddingProviderDescriptor,
    fallback_dimension: int = DEFAULT_FALLBACK_DIM,
    timeout: float = 30.0,
    transport: httpx.BaseTransport | None = None,
):
    if descriptor.endpoint in ("builtin", "mock"):
        return HashingEncoder(dimension=fallback_dimension)
    return HttpEncoder(descriptor, timeout=timeout, transport=transport)
