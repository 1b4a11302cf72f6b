"""Minimal embedded-text extraction from PDF files.

Covers the common case of uncompressed or Flate-compressed content
streams using Tj / TJ / ' / " text-showing operators with literal or hex
strings. No external PDF dependency is available in the target
environment; image-only PDFs yield an empty string and fall through to
the OCR stage of the extraction chain.
"""

from __future__ import annotations

import base64
import re
import zlib

_STREAM = re.compile(rb"stream\r?\n(.*?)(?:\r?\n)?endstream", re.DOTALL)
_FLATE = re.compile(rb"/FlateDecode")
_ASCII85 = re.compile(rb"/ASCII85Decode")
_STRING_OP = re.compile(
    rb"(\((?:\\.|[^\\()])*\)|<[0-9A-Fa-f\s]*>)\s*(Tj|'|\")"
)
_ARRAY_OP = re.compile(rb"\[((?:[^][]|\\.)*)\]\s*TJ", re.DOTALL)
_ARRAY_STRING = re.compile(rb"\((?:\\.|[^\\()])*\)")
_TEXT_POS = re.compile(rb"(T\*|Td|TD|Tm)")

_ESCAPES = {
    b"n": b"\n", b"r": b"\r", b"t": b"\t", b"b": b"\b", b"f": b"\f",
    b"(": b"(", b")": b")", b"\\": b"\\",
}


def _decode_literal(raw: bytes) -> bytes:
    # raw includes the surrounding parentheses
    body = raw[1:-1]
    out = bytearray()
    i = 0
    while i < len(body):
        c = body[i : i + 1]
        if c == b"\\" and i + 1 < len(body):
            nxt = body[i + 1 : i + 2]
            if nxt in _ESCAPES:
                out += _ESCAPES[nxt]
                i += 2
                continue
            if nxt.isdigit():  # octal escape, up to 3 digits
                digits = body[i + 1 : i + 4]
                run = b""
                for d in digits:
                    if chr(d).isdigit():
                        run += bytes([d])
                    else:
                        break
                out.append(int(run, 8) & 0xFF)
                i += 1 + len(run)
                continue
            i += 1
            continue
        out += c
        i += 1
    return bytes(out)


def _decode_hex(raw: bytes) -> bytes:
    digits = re.sub(rb"\s", b"", raw[1:-1])
    if len(digits) % 2:
        digits += b"0"
    return bytes.fromhex(digits.decode("ascii"))


def _stream_text(data: bytes) -> str:
    pieces: list[bytes] = []
    pos = 0
    for match in _STRING_OP.finditer(data):
        _emit_breaks(data, pos, match.start(), pieces)
        token = match.group(1)
        pieces.append(
            _decode_literal(token) if token.startswith(b"(") else _decode_hex(token)
        )
        pos = match.end()
    for match in _ARRAY_OP.finditer(data):
        parts = [_decode_literal(s.group(0)) for s in _ARRAY_STRING.finditer(match.group(1))]
        if parts:
            pieces.append(b"".join(parts))
            pieces.append(b"\n")
    text = b"".join(pieces)
    return text.decode("latin-1", errors="replace")


def _emit_breaks(data: bytes, start: int, end: int, pieces: list[bytes]) -> None:
    # positioning operators between strings imply a line break
    if _TEXT_POS.search(data, start, end) and pieces:
        pieces.append(b"\n")


def extract_pdf_text(pdf_bytes: bytes, page_limit: int | None = None) -> str:
    """Best-effort text layer extraction. Returns "" when no text
    operators are found (scanned/image-only documents)."""
    if not pdf_bytes.startswith(b"%PDF"):
        return ""
    texts = []
    count = 0
    for match in _STREAM.finditer(pdf_bytes):
        if page_limit is not None and count >= page_limit:
            break
        raw = match.group(1)
        # look back for the stream dict to spot declared filters;
        # ASCII85 wraps Flate when both appear (filter chain order)
        head = pdf_bytes[max(0, match.start() - 400) : match.start()]
        if _ASCII85.search(head):
            try:
                raw = base64.a85decode(raw.strip(), adobe=True)
            except ValueError:
                continue
        if _FLATE.search(head):
            try:
                raw = zlib.decompress(raw)
            except zlib.error:
                continue
        if b"Tj" not in raw and b"TJ" not in raw:
            continue
        chunk = _stream_text(raw)
        if chunk.strip():
            texts.append(chunk)
            count += 1
    return "\n".join(texts).strip()
