"""Chunked document storage with exact dense top-k retrieval.

The index is a brute-force dot-product scan over unit-normalized vectors:
exact, fully deterministic (ties break on ascending (doc_id, chunk_id)),
and trivially checkable against a linear-scan oracle. Corpus scale in the
target deployments does not call for approximate search.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlparse

import numpy as np

from .embeddings import EmbeddingVector
from .errors import DimensionMismatchError, UserError

_MAGIC = b"VSTR"
_VERSION = 1

ORIGIN_DB = "DB"
ORIGIN_WEB = "WEB"


@dataclass(frozen=True)
class CorpusChunk:
    doc_id: int
    chunk_id: int
    text: str
    vector: EmbeddingVector
    source_url: str
    authority_score: float
    title: str
    published_date: str | None = None


@dataclass(frozen=True)
class RetrievedChunk:
    chunk: CorpusChunk
    similarity: float
    origin: str  # "DB" | "WEB"
    sub_query_index: int

    @property
    def label(self) -> str:
        return f"[{self.origin}_{self.chunk.doc_id}_{self.chunk.chunk_id}]"


_SENTENCE_ENDS = (". ", "! ", "? ", ".\n", "!\n", "?\n")


def chunk_spans(
    text: str, size: int = 1500, overlap: int = 200, slack: int = 100
) -> list[tuple[int, int]]:
    """Sliding-window chunk boundaries.

    Windows of ``size`` characters advancing by ``size - overlap``; the
    cut snaps left to a sentence end when one falls within ``slack``
    characters of the window edge.
    """
    if not text:
        return []
    spans = []
    start = 0
    n = len(text)
    while True:
        end = min(start + size, n)
        if end < n:
            window = text[max(start, end - slack) : end]
            best = -1
            for marker in _SENTENCE_ENDS:
                pos = window.rfind(marker)
                if pos > best:
                    best = pos + len(marker) - 1  # cut after the punctuation+space
            if best >= 0:
                snapped = max(start, end - slack) + best
                # never snap so far back that the window stops advancing
                if snapped > start + overlap:
                    end = snapped
        spans.append((start, end))
        if end >= n:
            break
        start = end - overlap
        if start < 0:
            start = 0
    return spans


def authority_score_for(url: str, authority_domains: dict[str, float]) -> float:
    """Credibility weight from the host's domain suffix; unknown -> 0.5."""
    host = (urlparse(url).hostname or "").lower()
    best = 0.5
    best_len = 0
    for suffix, score in authority_domains.items():
        s = suffix.lower().lstrip(".")
        if (host == s or host.endswith("." + s)) and len(s) > best_len:
            best, best_len = float(score), len(s)
    return best


class VectorStore:
    """Exact cosine top-k search over stored chunks."""

    def __init__(self, dimension: int | None = None):
        self.dimension = dimension
        self.chunks: list[CorpusChunk] = []
        self._matrix: np.ndarray | None = None
        self._content_hashes: set[str] = set()
        self._dirty = False

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def doc_count(self) -> int:
        return len({c.doc_id for c in self.chunks})

    def add_chunk(self, chunk: CorpusChunk) -> None:
        if self.dimension is None:
            self.dimension = chunk.vector.dimension
        elif chunk.vector.dimension != self.dimension:
            raise DimensionMismatchError(
                f"chunk dimension {chunk.vector.dimension} != store {self.dimension}"
            )
        self.chunks.append(chunk)
        self._dirty = True

    def has_content_hash(self, content_hash: str) -> bool:
        return content_hash in self._content_hashes

    def register_content_hash(self, content_hash: str) -> None:
        self._content_hashes.add(content_hash)

    def _ensure_matrix(self) -> np.ndarray:
        if self._dirty or self._matrix is None:
            self._matrix = (
                np.stack([c.vector.values for c in self.chunks])
                if self.chunks
                else np.zeros((0, self.dimension or 0))
            )
            self._dirty = False
        return self._matrix

    def search(
        self, query_vector: EmbeddingVector, k: int, sub_query_index: int = 0
    ) -> list[RetrievedChunk]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if not self.chunks:
            return []
        if query_vector.dimension != self.dimension:
            raise DimensionMismatchError(
                f"query dimension {query_vector.dimension} != store {self.dimension}"
            )
        sims = self._ensure_matrix() @ query_vector.values
        order = sorted(
            range(len(self.chunks)),
            key=lambda i: (-sims[i], self.chunks[i].doc_id, self.chunks[i].chunk_id),
        )
        return [
            RetrievedChunk(
                chunk=self.chunks[i],
                similarity=float(sims[i]),
                origin=ORIGIN_DB,
                sub_query_index=sub_query_index,
            )
            for i in order[:k]
        ]

    # ── Persistence ─────────────────────────────────────────────────
    # Layout: magic, version u32, dim u32, count u32, count*dim float32
    # vectors, u64 metadata length, UTF-8 JSON metadata. Rebuildable
    # from the source JSONL at any time.

    def save(self, path: str | Path) -> None:
        path = Path(path)
        matrix = self._ensure_matrix().astype(np.float32)
        meta = {
            "chunks": [
                {
                    "doc_id": c.doc_id,
                    "chunk_id": c.chunk_id,
                    "text": c.text,
                    "model_id": c.vector.model_id,
                    "source_url": c.source_url,
                    "authority_score": c.authority_score,
                    "title": c.title,
                    "published_date": c.published_date,
                }
                for c in self.chunks
            ],
            "content_hashes": sorted(self._content_hashes),
        }
        blob = json.dumps(meta, ensure_ascii=False).encode("utf-8")
        tmp = path.with_suffix(path.suffix + ".tmp")
        with tmp.open("wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<III", _VERSION, self.dimension or 0, len(self.chunks)))
            fh.write(matrix.tobytes())
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise UserError(f"cannot read store {path}: {exc}") from exc
        if data[:4] != _MAGIC:
            raise UserError(f"{path} is not a vector store file")
        version, dim, count = struct.unpack_from("<III", data, 4)
        if version != _VERSION:
            raise UserError(f"unsupported store version {version}")
        offset = 16
        matrix = np.frombuffer(
            data, dtype=np.float32, count=count * dim, offset=offset
        ).reshape(count, dim).astype(np.float64)
        offset += count * dim * 4
        (meta_len,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
        store = cls(dimension=dim or None)
        for row, entry in zip(matrix, meta["chunks"]):
            store.add_chunk(
                CorpusChunk(
                    doc_id=entry["doc_id"],
                    chunk_id=entry["chunk_id"],
                    text=entry["text"],
                    vector=EmbeddingVector(values=row, model_id=entry["model_id"]),
                    source_url=entry["source_url"],
                    authority_score=entry["authority_score"],
                    title=entry["title"],
                    published_date=entry.get("published_date"),
                )
            )
        store._content_hashes = set(meta.get("content_hashes", ()))
        return store


@dataclass
class IngestStats:
    docs: int = 0
    chunks: int = 0
    skipped: int = 0


def ingest_corpus(
    jsonl_path: str | Path,
    store: VectorStore,
    encoder,
    authority_domains: dict[str, float] | None = None,
    chunk_size: int = 1500,
    chunk_overlap: int = 200,
    chunk_slack: int = 100,
) -> IngestStats:
    """Chunk, encode and insert every corpus entry from a JSONL file.

    Malformed lines are counted as skipped, never fatal. Idempotent:
    entries whose content hash is already registered add zero chunks.
    """
    jsonl_path = Path(jsonl_path)
    authority_domains = authority_domains or {}
    stats = IngestStats()
    try:
        lines = jsonl_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UserError(f"cannot read corpus {jsonl_path}: {exc}") from exc
    next_doc_id = max((c.doc_id for c in store.chunks), default=0) + 1
    for line in lines:
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            content = entry["content"]
            url = entry.get("url", "")
            if not isinstance(content, str) or not content.strip():
                raise ValueError("empty content")
        except (json.JSONDecodeError, KeyError, ValueError, TypeError):
            stats.skipped += 1
            continue
        content_hash = entry.get("content_hash")
        if content_hash and store.has_content_hash(content_hash):
            stats.skipped += 1
            continue
        spans = chunk_spans(content, chunk_size, chunk_overlap, chunk_slack)
        texts = [content[a:b] for a, b in spans]
        vectors = encoder.encode_batch(texts)
        for chunk_id, (text, vector) in enumerate(zip(texts, vectors), start=1):
            store.add_chunk(
                CorpusChunk(
                    doc_id=next_doc_id,
                    chunk_id=chunk_id,
                    text=text,
                    vector=vector,
                    source_url=url,
                    authority_score=authority_score_for(url, authority_domains),
                    title=entry.get("title", ""),
                    published_date=entry.get("collected_at"),
                )
            )
        if content_hash:
            store.register_content_hash(content_hash)
        stats.docs += 1
        stats.chunks += len(spans)
        next_doc_id += 1
    return stats
