"""The web arm of retrieval: domain-constrained search, model-assisted
article selection, and multi-fallback content extraction.

Per-host requests are serialized globally and failures never cross the
sub-query boundary: a document that cannot be fetched or parsed simply
shrinks the evidence set.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from urllib.parse import urlparse

import httpx

from .corpus import normalize_url
from .errors import (
    ExtractionFailedError,
    FetchError,
    InvalidUrlError,
    RateLimitError,
    TransportError,
)
from .gateway import GenerationRequest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchCandidate:
    url: str
    title: str
    snippet: str
    source_rank: int


@dataclass(frozen=True)
class ExtractedDocument:
    url: str
    title: str
    body_text: str
    content_kind: str  # html | pdf_text | pdf_ocr
    fetched_at: str


def compose_query(sub_query: str, domain_suffix: str) -> str:
    """Byte-reproducible search string: sub-query, one space, suffix."""
    return f"{sub_query} {domain_suffix}" if domain_suffix else sub_query


class LiveSearchProvider:
    """HTTP GET meta-search client: ?q=<query> -> JSON [{title,url,snippet}]."""

    def __init__(self, endpoint: str, timeout: float = 10.0, max_retries: int = 2,
                 transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self.max_retries = max_retries
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def search(self, query: str) -> list[SearchCandidate]:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.get(self.endpoint, params={"q": query})
                if resp.status_code == 429:
                    retry_after = resp.headers.get("Retry-After")
                    raise RateLimitError(
                        "search provider rate limit",
                        retry_after=float(retry_after) if retry_after else None,
                    )
                resp.raise_for_status()
                return [
                    SearchCandidate(
                        url=item["url"],
                        title=item.get("title", ""),
                        snippet=item.get("snippet", ""),
                        source_rank=i,
                    )
                    for i, item in enumerate(resp.json())
                ]
            except (httpx.TransportError, httpx.TimeoutException) as exc:
                last_exc = exc
                if attempt < self.max_retries:
                    time.sleep(0.2 * (2**attempt))
            except httpx.HTTPStatusError as exc:
                raise TransportError(f"search provider: {exc}") from exc
        raise TransportError(f"search provider unreachable: {last_exc}") from last_exc


class FixtureSearchProvider:
    """Deterministic provider backed by a JSON mapping
    {query string: [{url, title, snippet}, ...]}."""

    def __init__(self, fixtures: dict | str | Path | None = None):
        if fixtures is None:
            fixtures = {}
        if isinstance(fixtures, (str, Path)):
            fixtures = json.loads(Path(fixtures).read_text(encoding="utf-8"))
        self.fixtures = fixtures

    def search(self, query: str) -> list[SearchCandidate]:
        return [
            SearchCandidate(
                url=item["url"],
                title=item.get("title", ""),
                snippet=item.get("snippet", ""),
                source_rank=i,
            )
            for i, item in enumerate(self.fixtures.get(query, []))
        ]


def web_search(sub_query: str, domain_suffix: str, provider) -> list[SearchCandidate]:
    """Search with the composed query; duplicates collapse on normalized
    URL keeping the first occurrence. Zero results is not an error."""
    if not sub_query.strip():
        raise ValueError("sub_query must be non-empty")
    candidates = provider.search(compose_query(sub_query, domain_suffix))
    seen: set[str] = set()
    out = []
    for cand in candidates:
        try:
            key = normalize_url(cand.url)
        except InvalidUrlError:
            continue
        if key in seen:
            continue
        seen.add(key)
        out.append(cand)
    return out


_INDEX_LIST = re.compile(r"^\s*\d+\s*(?:,\s*\d+\s*)*$")


def select_articles(
    candidates: list[SearchCandidate],
    sub_query: str,
    top_n: int,
    gateway,
    backend,
) -> list[SearchCandidate]:
    """Ask the model for a comma-separated index ranking over the
    numbered candidates; anything unparseable degrades to source-rank
    order truncated to ``top_n``. Output is always a subset of the input.
    """
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if not candidates:
        return []
    if len(candidates) == 1:
        return list(candidates)
    listing = "\n".join(
        f"{i + 1}. {c.title} - {c.url}\n   {c.snippet}"
        for i, c in enumerate(candidates)
    )
    prompt = (
        f"Select the most relevant articles (best first, up to {top_n}) for the "
        f"query below. Answer with a comma-separated list of numbers only.\n"
        f"Query: {sub_query}\n{listing}"
    )
    fallback = sorted(candidates, key=lambda c: c.source_rank)[:top_n]
    try:
        completion = gateway.generate(
            GenerationRequest(prompt=prompt, temperature=0.0, model_id=backend.model_id),
            backend,
            stage="select_articles",
        )
    except Exception:
        logger.warning("article selector failed; using source-rank order")
        return fallback
    line = completion.strip().splitlines()[0] if completion.strip() else ""
    if not _INDEX_LIST.match(line):
        return fallback
    picked = []
    seen: set[int] = set()
    for token in line.split(","):
        idx = int(token.strip()) - 1
        if 0 <= idx < len(candidates) and idx not in seen:
            seen.add(idx)
            picked.append(candidates[idx])
        if len(picked) == top_n:
            break
    return picked or fallback


class _MainContentParser(HTMLParser):
    """Boilerplate-stripping extraction: text from paragraph and heading
    elements outside nav/script/style/header/footer/aside containers."""

    SKIP = {"script", "style", "nav", "header", "footer", "aside", "noscript"}
    KEEP = {"p", "h1", "h2", "h3", "h4", "li", "td", "th", "blockquote", "pre"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self._skip_depth = 0
        self._keep_depth = 0
        self._in_title = False
        self.title_parts: list[str] = []
        self.blocks: list[str] = []
        self._current: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in self.SKIP:
            self._skip_depth += 1
        elif tag == "title":
            self._in_title = True
        elif tag in self.KEEP and not self._skip_depth:
            self._keep_depth += 1

    def handle_endtag(self, tag):
        if tag in self.SKIP:
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag == "title":
            self._in_title = False
        elif tag in self.KEEP and self._keep_depth:
            self._keep_depth -= 1
            if not self._keep_depth:
                block = " ".join("".join(self._current).split())
                if block:
                    self.blocks.append(block)
                self._current = []

    def handle_data(self, data):
        if self._in_title:
            self.title_parts.append(data)
        elif self._keep_depth and not self._skip_depth:
            self._current.append(data)


def extract_html_text(html: str) -> tuple[str, str]:
    parser = _MainContentParser()
    parser.feed(html)
    parser.close()
    title = " ".join("".join(parser.title_parts).split())
    return "\n".join(parser.blocks), title


class HttpFetcher:
    """Polite document fetcher: one request at a time per host, explicit
    user agent, bounded timeout."""

    def __init__(
        self,
        timeout: float = 10.0,
        user_agent: str = "stagerag/0.1",
        transport: httpx.BaseTransport | None = None,
    ):
        self._client = httpx.Client(
            timeout=timeout,
            headers={"User-Agent": user_agent},
            follow_redirects=True,
            transport=transport,
        )
        self._host_locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def _lock_for(self, url: str) -> threading.Lock:
        host = (urlparse(url).hostname or "").lower()
        with self._registry_lock:
            return self._host_locks.setdefault(host, threading.Lock())

    def fetch(self, url: str) -> tuple[bytes, str]:
        with self._lock_for(url):
            try:
                resp = self._client.get(url)
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise FetchError(f"fetch failed for {url}: {exc}") from exc
        return resp.content, resp.headers.get("content-type", "")


class FixtureFetcher:
    """Mapping url -> (content_type, bytes) for hermetic tests."""

    def __init__(self, fixtures: dict[str, tuple[str, bytes]]):
        self.fixtures = fixtures

    def fetch(self, url: str) -> tuple[bytes, str]:
        if url not in self.fixtures:
            raise FetchError(f"no fixture for {url}")
        content_type, body = self.fixtures[url]
        return body, content_type


def _looks_like_pdf(body: bytes, content_type: str) -> bool:
    return body.startswith(b"%PDF") or "application/pdf" in content_type.lower()


def extract_content(
    candidate: SearchCandidate,
    fetcher,
    ocr_enabled: bool = False,
    ocr_page_limit: int = 20,
) -> ExtractedDocument:
    """Fetch a candidate and run the extraction fallback chain:
    HTML main content, then PDF embedded text, then OCR (when enabled,
    up to the configured page cap). Raises ExtractionFailedError only
    when every stage fails."""
    body, content_type = fetcher.fetch(candidate.url)
    fetched_at = datetime.now(timezone.utc).isoformat(timespec="seconds")

    if not _looks_like_pdf(body, content_type):
        text, title = extract_html_text(body.decode("utf-8", errors="replace"))
        if text.strip():
            return ExtractedDocument(
                url=candidate.url,
                title=title or candidate.title,
                body_text=text,
                content_kind="html",
                fetched_at=fetched_at,
            )
        raise ExtractionFailedError(
            f"no extractable main content at {candidate.url}"
        )

    from .pdftext import extract_pdf_text

    text = extract_pdf_text(body, page_limit=ocr_page_limit)
    if text.strip():
        return ExtractedDocument(
            url=candidate.url,
            title=candidate.title,
            body_text=text,
            content_kind="pdf_text",
            fetched_at=fetched_at,
        )

    if ocr_enabled:
        text = _ocr_pdf(body, ocr_page_limit)
        if text.strip():
            return ExtractedDocument(
                url=candidate.url,
                title=candidate.title,
                body_text=text,
                content_kind="pdf_ocr",
                fetched_at=fetched_at,
            )
    raise ExtractionFailedError(
        f"all extraction fallbacks failed for {candidate.url} "
        f"(ocr {'enabled' if ocr_enabled else 'disabled'})"
    )


def _ocr_pdf(body: bytes, page_limit: int) -> str:
    try:
        import pytesseract  # optional heavy dependency
        from PIL import Image  # noqa: F401
    except ImportError:
        logger.warning("OCR requested but pytesseract is unavailable")
        return ""
    # rasterization support is deployment-specific; without it the OCR
    # stage reports no text and the chain fails over
    logger.warning("OCR rasterization backend not configured")
    return ""
