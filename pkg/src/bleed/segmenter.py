"""Deterministic rule-based sentence segmentation with byte offsets.

Splits happen only at the ASCII terminators ``. ! ?`` when followed by
whitespace and an ASCII uppercase letter (or end of text), so offsets are
UTF-8 byte offsets that can never land inside a multi-byte sequence. A
fixed abbreviation list suppresses false splits.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .corpus import Document

_TERMINATORS = frozenset(b".!?")
_WHITESPACE = frozenset(b" \t\n\r\x0b\x0c")

# Trailing tokens (lowercased, terminator included) that never end a sentence.
ABBREVIATIONS = frozenset({
    "dr.", "mr.", "mrs.", "ms.", "prof.", "sr.", "jr.", "st.",
    "vs.", "etc.", "e.g.", "i.e.", "cf.", "al.", "approx.",
    "u.s.", "u.k.", "inc.", "ltd.", "co.", "corp.", "fig.", "no.",
})

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase tokens split on non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Sentence:
    index: int
    char_start: int  # UTF-8 byte offset, inclusive
    char_end: int    # UTF-8 byte offset, exclusive
    text: str


@dataclass(frozen=True)
class SegmentedDocument:
    doc: Document
    sentences: tuple[Sentence, ...]


class SegmentationError(ValueError):
    pass


def _token_before(data: bytes, term_index: int) -> str:
    """The whitespace-delimited token ending at data[term_index] (inclusive)."""
    start = term_index
    while start > 0 and data[start - 1] not in _WHITESPACE:
        start -= 1
    return data[start:term_index + 1].decode("utf-8", errors="replace")


def split_sentences(text: str) -> list[Sentence]:
    """Split text into sentences with exact byte offsets.

    Sentences are trimmed of surrounding whitespace; the dropped whitespace
    lives in the gaps between consecutive offsets, so slicing the original
    bytes at the offsets reproduces each sentence exactly.
    """
    data = text.encode("utf-8")
    n = len(data)
    breaks: list[int] = []

    i = 0
    while i < n:
        if data[i] not in _TERMINATORS:
            i += 1
            continue
        run_end = i + 1
        while run_end < n and data[run_end] in _TERMINATORS:
            run_end += 1
        # boundary requires whitespace then ASCII uppercase, or end of text
        k = run_end
        while k < n and data[k] in _WHITESPACE:
            k += 1
        is_boundary = k == n or (k > run_end and 0x41 <= data[k] <= 0x5A)
        if is_boundary and run_end - i == 1 and data[i] == ord("."):
            if _token_before(data, i).lower() in ABBREVIATIONS:
                is_boundary = False
        if is_boundary and run_end < n:
            breaks.append(run_end)
        i = run_end

    sentences: list[Sentence] = []
    span_start = 0
    for span_end in breaks + [n]:
        a, b = span_start, span_end
        while a < b and data[a] in _WHITESPACE:
            a += 1
        while b > a and data[b - 1] in _WHITESPACE:
            b -= 1
        if a < b:
            sentences.append(Sentence(len(sentences), a, b, data[a:b].decode("utf-8")))
        span_start = span_end
    return sentences


def segment(doc: Document) -> SegmentedDocument:
    sentences = split_sentences(doc.text)
    if not sentences:
        raise SegmentationError(f"document {doc.doc_id!r} yields no sentences")
    return SegmentedDocument(doc, tuple(sentences))


def truncate_to_first_sentence(text: str) -> str:
    """First sentence of the text, or the trimmed input when nothing splits."""
    sentences = split_sentences(text)
    return sentences[0].text if sentences else text.strip()
