"""Deterministic post-hoc citation insertion.

This is the trust mechanism of the engine: it runs after generation,
uses only embedding cosine similarity, and is a pure function of its
inputs. Encoder failures propagate; citation never silently degrades.

Marker syntax is "[DB_<doc>_<chunk>]" / "[WEB_<doc>_<chunk>]".
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .embeddings import cosine_similarity
from .vectorstore import RetrievedChunk

MARKER_RE = re.compile(r"\[(DB|WEB)_(\d+)_(\d+)\]")

# Words whose trailing period does not end a sentence.
ABBREVIATIONS = frozenset(
    {
        "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "no", "vs",
        "etc", "approx", "dept", "govt", "fig", "eq", "e.g", "i.e",
        "cf", "al", "inc", "ltd", "co", "jan", "feb", "mar", "apr",
        "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
    }
)

_BOUNDARY = re.compile(r"[.!?]+(?=\s)")


@dataclass(frozen=True)
class CitationRecord:
    label: str
    origin: str
    doc_id: int
    chunk_id: int
    source_url: str
    similarity: float
    title: str
    published_date: str | None = None


@dataclass(frozen=True)
class CitedAnswer:
    text: str
    citations: tuple[CitationRecord, ...]
    uncited_sentence_count: int

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "citations": [
                {
                    "label": c.label,
                    "origin": c.origin,
                    "doc_id": c.doc_id,
                    "chunk_id": c.chunk_id,
                    "source_url": c.source_url,
                    "similarity": c.similarity,
                    "title": c.title,
                    "published_date": c.published_date,
                }
                for c in self.citations
            ],
            "uncited_sentence_count": self.uncited_sentence_count,
        }


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Ordered, non-overlapping (start, end) spans covering all
    non-whitespace content.

    A boundary is terminal punctuation (. ! ?) followed by whitespace
    and then an uppercase letter or digit; trailing periods of known
    abbreviations are exempt, and decimal points never match (no
    whitespace follows them).
    """
    spans: list[tuple[int, int]] = []
    start = 0
    n = len(text)
    for match in _BOUNDARY.finditer(text):
        end = match.end()
        follow = text[end:].lstrip()
        if not follow or not (follow[0].isupper() or follow[0].isdigit()):
            continue
        word = re.search(r"([\w.]+)[.!?]+$", text[start:end])
        if word and match.group(0) == ".":
            stem = word.group(1).lower().rstrip(".")
            if stem in ABBREVIATIONS or stem.split(".")[-1] in ABBREVIATIONS:
                continue
            # single capital letters are initials ("M. Singh")
            if len(stem) == 1 and stem.isalpha() and text[start:end].rstrip()[-2].isupper():
                continue
        spans.append((_skip_ws(text, start), end))
        start = end
    if start < n and text[start:].strip():
        stripped_end = n - (len(text) - len(text.rstrip()))
        spans.append((_skip_ws(text, start), stripped_end))
    return spans


def _skip_ws(text: str, i: int) -> int:
    while i < len(text) and text[i].isspace():
        i += 1
    return i


def split_sentences(text: str) -> list[str]:
    return [text[a:b] for a, b in sentence_spans(text)]


def chunk_label(chunk: RetrievedChunk) -> str:
    return chunk.label


def attribute(
    answer: str,
    chunks: list[RetrievedChunk],
    encoder,
    threshold: float,
    max_citations_per_sentence: int | None = 4,
    min_sentence_chars: int = 25,
) -> CitedAnswer:
    """Attach markers to every sentence whose cosine to a chunk strictly
    exceeds ``threshold``.

    Markers append after the sentence's terminal punctuation, ordered by
    similarity descending then label ascending, capped per sentence.
    Sentences shorter than ``min_sentence_chars`` are exempt (short
    fragments produce spurious high cosines). Stripping all markers from
    the result reproduces the input byte-for-byte.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    spans = sentence_spans(answer)
    chunk_vectors = [(c, encoder.encode(c.chunk.text)) for c in chunks]

    insertions: list[tuple[int, str]] = []  # (offset, marker string)
    best_per_label: dict[str, tuple[RetrievedChunk, float]] = {}
    label_first_pos: dict[str, int] = {}
    uncited = 0
    for start, end in spans:
        sentence = answer[start:end]
        if len(sentence.strip()) < min_sentence_chars:
            continue
        sent_vec = encoder.encode(sentence)
        matches = []
        for chunk, vec in chunk_vectors:
            sim = cosine_similarity(sent_vec, vec)
            if sim > threshold:
                matches.append((sim, chunk.label, chunk))
        if not matches:
            uncited += 1
            continue
        matches.sort(key=lambda m: (-m[0], m[1]))
        if max_citations_per_sentence is not None:
            matches = matches[:max_citations_per_sentence]
        marker_text = "".join(label for _, label, _ in matches)
        insertions.append((end, marker_text))
        for pos, (sim, label, chunk) in enumerate(matches):
            kept = best_per_label.get(label)
            if kept is None or sim > kept[1]:
                best_per_label[label] = (chunk, sim)
            label_first_pos.setdefault(label, (end, pos))

    out = []
    cursor = 0
    for offset, marker_text in insertions:
        out.append(answer[cursor:offset])
        out.append(marker_text)
        cursor = offset
    out.append(answer[cursor:])
    text = "".join(out)

    records = tuple(
        CitationRecord(
            label=label,
            origin=chunk.origin,
            doc_id=chunk.chunk.doc_id,
            chunk_id=chunk.chunk.chunk_id,
            source_url=chunk.chunk.source_url,
            similarity=sim,
            title=chunk.chunk.title,
            published_date=chunk.chunk.published_date,
        )
        for label, (chunk, sim) in sorted(
            best_per_label.items(), key=lambda kv: label_first_pos[kv[0]]
        )
    )
    return CitedAnswer(text=text, citations=records, uncited_sentence_count=uncited)


def strip_markers(text: str) -> str:
    return MARKER_RE.sub("", text)


def render_citation_index(cited: CitedAnswer) -> str:
    """Human-readable source index, one line per label in order of first
    appearance in the answer text."""
    lines = ["Sources:"]
    if not cited.citations:
        lines.append("  no sources matched")
        return "\n".join(lines)
    for record in cited.citations:
        date = f", {record.published_date}" if record.published_date else ""
        title = record.title or "(untitled)"
        lines.append(
            f"  {record.label} {title} - {record.source_url} "
            f"(similarity {record.similarity:.3f}, {record.origin}{date})"
        )
    return "\n".join(lines)
