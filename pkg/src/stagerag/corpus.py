"""Autonomous corpus curation: dedup ledger, crash-safe JSONL persistence,
quality scoring, and per-agent pattern learning.

Durability contract: the dedup check, the fsynced append, and the ledger
update form one critical section. A crash between append and ledger save
is healed at startup by replaying the JSONL tail into the ledger; a torn
final line is dropped, never surfaced as a partial record.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import parse_qsl, urlencode, urlparse, urlunparse

from filelock import FileLock

from .errors import InvalidUrlError

TRACKING_PARAM_PREFIXES = ("utm_",)
TRACKING_PARAMS = {"fbclid", "gclid"}

DEDUP_METHOD_ORDER = ("url", "url_hash", "content_hash", "title")

_WORD = re.compile(r"[a-z0-9]+")
_NUMERIC_TOKEN = re.compile(r"\d+(?:\.\d+)?")


def normalize_url(url: str) -> str:
    """Canonical URL form: lowercase scheme/host, default ports and
    fragments dropped, trailing slash removed, tracking parameters
    (utm_*, fbclid, gclid) stripped, remaining query keys sorted.
    Idempotent.
    """
    parsed = urlparse(url.strip())
    if not parsed.scheme or not parsed.netloc:
        raise InvalidUrlError(f"not an absolute URL: {url!r}")
    scheme = parsed.scheme.lower()
    host = (parsed.hostname or "").lower()
    port = parsed.port
    if port is not None and not (
        (scheme == "http" and port == 80) or (scheme == "https" and port == 443)
    ):
        host = f"{host}:{port}"
    path = parsed.path
    if path.endswith("/"):
        path = path.rstrip("/")
    params = [
        (k, v)
        for k, v in parse_qsl(parsed.query, keep_blank_values=True)
        if k not in TRACKING_PARAMS
        and not any(k.startswith(p) for p in TRACKING_PARAM_PREFIXES)
    ]
    query = urlencode(sorted(params))
    return urlunparse((scheme, host, path, "", query, ""))


def canonicalize_content(content: str) -> str:
    """Lowercase, collapse whitespace runs, trim. Applied before hashing
    so trivially reformatted duplicates still collide."""
    return " ".join(content.lower().split())


def content_digest(content: str) -> str:
    # md5 is used as a 128-bit identity fingerprint, not for security
    return hashlib.md5(canonicalize_content(content).encode("utf-8")).hexdigest()


def url_digest(normalized: str) -> str:
    return hashlib.md5(normalized.encode("utf-8")).hexdigest()


def normalize_title(title: str) -> str:
    return " ".join(title.lower().split())


@dataclass(frozen=True)
class QualityScore:
    length: float
    relevance: float
    regional: float
    richness: float
    pdf: float

    WEIGHTS = (0.20, 0.30, 0.20, 0.20, 0.10)

    @property
    def total(self) -> float:
        comps = (self.length, self.relevance, self.regional, self.richness, self.pdf)
        return sum(w * c for w, c in zip(self.WEIGHTS, comps))

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "relevance": self.relevance,
            "regional": self.regional,
            "richness": self.richness,
            "pdf": self.pdf,
            "total": self.total,
        }


@dataclass(frozen=True)
class CorpusEntry:
    url: str
    normalized_url: str
    title: str
    content: str
    content_hash: str
    quality: QualityScore
    content_kind: str  # html | pdf_text | pdf_ocr
    collected_at: str  # RFC 3339
    agent_name: str
    source_query: str

    @classmethod
    def build(
        cls,
        url: str,
        title: str,
        content: str,
        content_kind: str,
        agent_name: str,
        source_query: str,
        quality: QualityScore,
        collected_at: str | None = None,
    ) -> "CorpusEntry":
        return cls(
            url=url,
            normalized_url=normalize_url(url),
            title=title,
            content=content,
            content_hash=content_digest(content),
            quality=quality,
            content_kind=content_kind,
            collected_at=collected_at
            or datetime.now(timezone.utc).isoformat(timespec="seconds"),
            agent_name=agent_name,
            source_query=source_query,
        )

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "normalized_url": self.normalized_url,
            "title": self.title,
            "content": self.content,
            "content_hash": self.content_hash,
            "quality": self.quality.to_dict(),
            "content_kind": self.content_kind,
            "collected_at": self.collected_at,
            "agent_name": self.agent_name,
            "source_query": self.source_query,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusEntry":
        q = data["quality"]
        return cls(
            url=data["url"],
            normalized_url=data["normalized_url"],
            title=data["title"],
            content=data["content"],
            content_hash=data["content_hash"],
            quality=QualityScore(
                length=q["length"],
                relevance=q["relevance"],
                regional=q["regional"],
                richness=q["richness"],
                pdf=q["pdf"],
            ),
            content_kind=data["content_kind"],
            collected_at=data["collected_at"],
            agent_name=data["agent_name"],
            source_query=data["source_query"],
        )


def score_quality(
    content: str,
    content_kind: str,
    agriculture_keywords: list[str],
    regional_keywords: list[str],
    relevance_cap: int = 20,
    regional_cap: int = 10,
    richness_cap: int = 50,
    length_norm: int = 5000,
) -> QualityScore:
    """Heuristic component scores feeding the fixed 20/30/20/20/10 blend."""
    words = set(_WORD.findall(content.lower()))

    def keyword_fraction(keywords: list[str], cap: int) -> float:
        matches = sum(1 for kw in keywords if kw.lower() in words)
        return min(matches, cap) / cap

    numeric_tokens = len(_NUMERIC_TOKEN.findall(content))
    table_markers = content.count("|") + content.count("\t")
    return QualityScore(
        length=min(1.0, len(content) / length_norm),
        relevance=keyword_fraction(agriculture_keywords, relevance_cap),
        regional=keyword_fraction(regional_keywords, regional_cap),
        richness=min(1.0, (numeric_tokens + table_markers) / richness_cap),
        pdf=1.0 if content_kind.startswith("pdf") else 0.0,
    )


class DedupLedger:
    """Four-method duplicate detection with atomic JSON persistence.

    Methods fire in a fixed order: normalized URL, URL digest, content
    digest, normalized title. Individual methods can be disabled for
    ablation; detection strictly weakens when one is removed.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        enabled_methods: tuple[str, ...] | list[str] = DEDUP_METHOD_ORDER,
    ):
        self.path = Path(path) if path else None
        self.enabled_methods = tuple(enabled_methods)
        self.url_set: set[str] = set()
        self.url_hash_set: set[str] = set()
        self.content_hash_set: set[str] = set()
        self.title_index: set[str] = set()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        data = json.loads(self.path.read_text(encoding="utf-8"))
        self.url_set = set(data.get("urls", ()))
        self.url_hash_set = set(data.get("url_hashes", ()))
        self.content_hash_set = set(data.get("content_hashes", ()))
        self.title_index = set(data.get("titles", ()))

    def save(self) -> None:
        if self.path is None:
            return
        payload = json.dumps(
            {
                "urls": sorted(self.url_set),
                "url_hashes": sorted(self.url_hash_set),
                "content_hashes": sorted(self.content_hash_set),
                "titles": sorted(self.title_index),
            }
        )
        lock = FileLock(str(self.path) + ".lock")
        with lock:
            tmp = self.path.with_suffix(self.path.suffix + ".tmp")
            tmp.write_text(payload, encoding="utf-8")
            os.replace(tmp, self.path)

    def check(self, entry: CorpusEntry) -> tuple[bool, str | None]:
        """Return (is_duplicate, first matching method)."""
        probes = {
            "url": entry.normalized_url in self.url_set,
            "url_hash": url_digest(entry.normalized_url) in self.url_hash_set,
            "content_hash": entry.content_hash in self.content_hash_set,
            "title": bool(entry.title)
            and normalize_title(entry.title) in self.title_index,
        }
        for method in DEDUP_METHOD_ORDER:
            if method in self.enabled_methods and probes[method]:
                return True, method
        return False, None

    def add(self, entry: CorpusEntry) -> None:
        self.url_set.add(entry.normalized_url)
        self.url_hash_set.add(url_digest(entry.normalized_url))
        self.content_hash_set.add(entry.content_hash)
        if entry.title:
            self.title_index.add(normalize_title(entry.title))


def is_duplicate(entry: CorpusEntry, ledger: DedupLedger) -> tuple[bool, str | None]:
    return ledger.check(entry)


def load_corpus(path: str | Path) -> tuple[list[CorpusEntry], int]:
    """Read a corpus JSONL file, dropping a torn final line if present.

    Returns (entries, recovered) where ``recovered`` counts dropped
    incomplete tail lines (0 or 1 in practice).
    """
    path = Path(path)
    if not path.exists():
        return [], 0
    raw = path.read_text(encoding="utf-8")
    lines = raw.split("\n")
    entries: list[CorpusEntry] = []
    recovered = 0
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            entries.append(CorpusEntry.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError):
            if i >= len(lines) - 2:  # torn tail (last content line)
                recovered += 1
            # earlier malformed lines are skipped silently: the writer
            # never produces them, so they indicate external editing
    return entries, recovered


class JsonlSink:
    """Crash-safe append-only corpus writer.

    Opening the sink replays any JSONL records missing from the ledger
    (recovering from a crash between append and ledger persist).
    """

    WRITTEN = "written"
    SKIPPED_DUPLICATE = "skipped_duplicate"

    def __init__(self, path: str | Path, ledger: DedupLedger):
        self.path = Path(path)
        self.ledger = ledger
        self._lock = threading.Lock()
        self._file_lock = FileLock(str(self.path) + ".append.lock")
        self.recovered_records = 0
        self._replay()

    def _replay(self) -> None:
        entries, torn = load_corpus(self.path)
        healed = 0
        for entry in entries:
            dup, _ = self.ledger.check(entry)
            if not dup:
                self.ledger.add(entry)
                healed += 1
        if healed:
            self.ledger.save()
        self.recovered_records = healed
        self.torn_tail_dropped = torn

    def append_entry(self, entry: CorpusEntry) -> str:
        line = json.dumps(entry.to_dict(), ensure_ascii=False) + "\n"
        with self._lock, self._file_lock:
            dup, _method = self.ledger.check(entry)
            if dup:
                return self.SKIPPED_DUPLICATE
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            self.ledger.add(entry)
            self.ledger.save()
        return self.WRITTEN


@dataclass
class AgentMemory:
    """What a collection agent has learned about query productivity."""

    success_patterns: Counter = field(default_factory=Counter)
    failure_patterns: Counter = field(default_factory=Counter)
    domain_quality_sum: dict[str, float] = field(default_factory=dict)
    domain_counts: dict[str, int] = field(default_factory=dict)
    queries_issued: int = 0

    @property
    def domain_preferences(self) -> dict[str, float]:
        return {
            host: self.domain_quality_sum[host] / self.domain_counts[host]
            for host in self.domain_counts
        }

    def record_result(
        self, source_query: str, url: str, quality_total: float, success_cutoff: float
    ) -> None:
        tokens = [t for t in _WORD.findall(source_query.lower()) if len(t) > 3]
        target = (
            self.success_patterns
            if quality_total >= success_cutoff
            else self.failure_patterns
        )
        target.update(tokens)
        host = (urlparse(url).hostname or "").lower()
        if host:
            self.domain_quality_sum[host] = (
                self.domain_quality_sum.get(host, 0.0) + quality_total
            )
            self.domain_counts[host] = self.domain_counts.get(host, 0) + 1


def adapt_queries(
    memory: AgentMemory,
    base_topics: list[str],
    host_preference_cutoff: float = 0.7,
) -> list[str]:
    """Reweight the next query batch by learned patterns.

    Topics are ordered by net keyword success; the single strongest
    success keyword is appended to the top query if absent; preferred
    hosts gain dedicated site-restricted variants. Deterministic in the
    memory state; an empty memory returns the base topics unchanged.
    """
    if not base_topics:
        return []

    def net(token: str) -> int:
        return memory.success_patterns.get(token, 0) - memory.failure_patterns.get(
            token, 0
        )

    def topic_score(topic: str) -> int:
        return sum(net(t) for t in _WORD.findall(topic.lower()) if len(t) > 3)

    ranked = sorted(
        range(len(base_topics)),
        key=lambda i: (-topic_score(base_topics[i]), i),
    )
    queries = [base_topics[i] for i in ranked]

    positive = [
        (token, count)
        for token, count in memory.success_patterns.most_common()
        if net(token) > 0
    ]
    if positive:
        best_token = max(positive, key=lambda tc: (net(tc[0]), tc[0]))[0]
        if best_token not in queries[0].lower():
            queries[0] = f"{queries[0]} {best_token}"

    for host, pref in sorted(memory.domain_preferences.items()):
        if pref >= host_preference_cutoff:
            queries.append(f"{queries[0]} site:{host}")
    return queries


@dataclass
class CollectionReport:
    per_agent: dict[str, dict[str, int]] = field(default_factory=dict)

    def bump(self, agent: str, outcome: str) -> None:
        bucket = self.per_agent.setdefault(
            agent, {"written": 0, "skipped": 0, "failed": 0}
        )
        bucket[outcome] += 1

    @property
    def totals(self) -> dict[str, int]:
        out = {"written": 0, "skipped": 0, "failed": 0}
        for bucket in self.per_agent.values():
            for key in out:
                out[key] += bucket[key]
        return out


@dataclass
class CollectorAgent:
    """One curation worker: a name, its seed topics, and its memory.

    ``adaptive`` agents re-rank their queries from learned patterns each
    round; keyword agents keep the seed ordering. Both share one sink.
    """

    name: str
    topics: list[str]
    adaptive: bool = True
    memory: AgentMemory = field(default_factory=AgentMemory)


def run_collection(
    agents: list[CollectorAgent],
    seed_topics: list[str],
    budget: int,
    sink: JsonlSink,
    search_fn,
    extract_fn,
    score_fn,
    host_preference_cutoff: float = 0.7,
    success_cutoff: float = 0.5,
) -> CollectionReport:
    """Round-robin collection loop: search, extract, score, dedup-gated
    append, memory update; stops when ``budget`` fetch attempts are spent
    or every agent runs out of candidates.

    ``search_fn(query) -> list of (url, title)``;
    ``extract_fn(url) -> (content, content_kind)`` raising on failure;
    ``score_fn(content, content_kind) -> QualityScore``.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    report = CollectionReport()
    pending: dict[str, list[tuple[str, str, str]]] = {a.name: [] for a in agents}
    query_cursor: dict[str, int] = {a.name: 0 for a in agents}
    attempts = 0
    exhausted: set[str] = set()
    while attempts < budget and len(exhausted) < len(agents):
        for agent in agents:
            if attempts >= budget or agent.name in exhausted:
                continue
            if not pending[agent.name]:
                queries = (
                    adapt_queries(
                        agent.memory, agent.topics or seed_topics,
                        host_preference_cutoff,
                    )
                    if agent.adaptive
                    else list(agent.topics or seed_topics)
                )
                if not queries:
                    exhausted.add(agent.name)
                    continue
                cursor = query_cursor[agent.name]
                query = queries[cursor % len(queries)]
                query_cursor[agent.name] = cursor + 1
                agent.memory.queries_issued += 1
                candidates = search_fn(query)
                if not candidates and cursor >= len(queries):
                    exhausted.add(agent.name)
                    continue
                pending[agent.name] = [
                    (url, title, query) for url, title in candidates
                ]
                if not pending[agent.name]:
                    continue
            url, title, query = pending[agent.name].pop(0)
            attempts += 1
            try:
                content, content_kind = extract_fn(url)
                quality = score_fn(content, content_kind)
                entry = CorpusEntry.build(
                    url=url,
                    title=title,
                    content=content,
                    content_kind=content_kind,
                    agent_name=agent.name,
                    source_query=query,
                    quality=quality,
                )
            except Exception:
                report.bump(agent.name, "failed")
                continue
            outcome = sink.append_entry(entry)
            if outcome == JsonlSink.WRITTEN:
                report.bump(agent.name, "written")
            else:
                report.bump(agent.name, "skipped")
            agent.memory.record_result(query, url, entry.quality.total, success_cutoff)
    return report
