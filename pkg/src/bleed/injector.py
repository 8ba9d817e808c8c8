"""Span injection at absolute and salience-relative positions.

All insertions happen at sentence boundaries with a single ASCII space as
separator, so stripping the injected range restores the original text
byte-for-byte. Offsets are UTF-8 byte offsets, matching the segmenter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

from .salience import SalienceProfile
from .segmenter import SegmentedDocument, split_sentences
from .corpus import Document


class InjectionMode(str, Enum):
    ABS_BEFORE = "abs:before"
    ABS_MIDDLE = "abs:middle"
    ABS_AFTER = "abs:after"
    REL_BEFORE = "rel:before"
    REL_AFTER = "rel:after"


ABSOLUTE_MODES = (InjectionMode.ABS_BEFORE, InjectionMode.ABS_MIDDLE, InjectionMode.ABS_AFTER)
RELATIVE_MODES = (InjectionMode.REL_BEFORE, InjectionMode.REL_AFTER)


class InjectionError(ValueError):
    pass


def validate_span(span_text: str) -> str:
    """Require a non-empty single sentence; returns the trimmed span."""
    sentences = split_sentences(span_text)
    if len(sentences) != 1:
        raise InjectionError(
            f"span must be exactly one sentence, got {len(sentences)}: {span_text!r}"
        )
    return sentences[0].text


@dataclass(frozen=True)
class InjectionSpec:
    span_text: str
    mode: InjectionMode

    def __post_init__(self) -> None:
        trimmed = validate_span(self.span_text)
        if trimmed != self.span_text:
            raise InjectionError(f"span carries surrounding whitespace: {self.span_text!r}")


@dataclass(frozen=True)
class AugmentedDocument:
    original_doc_id: str
    augmented_id: str
    text: str
    injected_range: tuple[int, int]  # byte offsets of the span within text
    mode: InjectionMode
    salient_index_used: int | None = None

    @property
    def doc_id(self) -> str:
        return self.augmented_id

    def to_document(self) -> Document:
        return Document(self.augmented_id, self.text)


def span_digest(span: str) -> str:
    return hashlib.sha1(span.encode("utf-8")).hexdigest()[:8]


def augmented_id_for(doc_id: str, mode: InjectionMode, span: str) -> str:
    return f"{doc_id}::{mode.value}::{span_digest(span)}"


def _insert(text: str, span: str, boundary: int) -> tuple[str, tuple[int, int]]:
    """Insert span at a byte boundary; boundary == len(bytes) appends."""
    data = text.encode("utf-8")
    span_bytes = span.encode("utf-8")
    if boundary >= len(data):
        new = data + b" " + span_bytes
        rng = (len(data) + 1, len(data) + 1 + len(span_bytes))
    else:
        new = data[:boundary] + span_bytes + b" " + data[boundary:]
        rng = (boundary, boundary + len(span_bytes))
    return new.decode("utf-8"), rng


def strip_injection(aug: AugmentedDocument) -> str:
    """Recover the original text by removing the span and its separator."""
    data = aug.text.encode("utf-8")
    start, end = aug.injected_range
    if end >= len(data):
        restored = data[:start - 1]
    else:
        restored = data[:start] + data[end + 1:]
    return restored.decode("utf-8")


def _middle_boundary(seg: SegmentedDocument) -> int:
    """Sentence start closest to the byte midpoint; ties go to the earlier one."""
    midpoint = len(seg.doc.text.encode("utf-8")) / 2
    return min((s.char_start for s in seg.sentences), key=lambda b: (abs(b - midpoint), b))


def inject_absolute(
    seg: SegmentedDocument,
    span: str,
    mode: InjectionMode,
    profile: SalienceProfile | None = None,
) -> AugmentedDocument:
    """Place a span before, in the middle of, or after a document.

    Middle insertion lands on the sentence boundary nearest the character
    midpoint, never splitting a sentence. A salience profile may be passed
    to stamp the salient index for distance bookkeeping.
    """
    span = validate_span(span)
    if mode not in ABSOLUTE_MODES:
        raise InjectionError(f"{mode} is not an absolute mode")
    text = seg.doc.text
    if mode is InjectionMode.ABS_BEFORE:
        boundary = 0
    elif mode is InjectionMode.ABS_AFTER:
        boundary = len(text.encode("utf-8"))
    else:
        boundary = _middle_boundary(seg)
    new_text, rng = _insert(text, span, boundary)
    return AugmentedDocument(
        original_doc_id=seg.doc.doc_id,
        augmented_id=augmented_id_for(seg.doc.doc_id, mode, span),
        text=new_text,
        injected_range=rng,
        mode=mode,
        salient_index_used=None if profile is None else profile.salient_index,
    )


def inject_relative(
    seg: SegmentedDocument,
    span: str,
    mode: InjectionMode,
    profile: SalienceProfile,
) -> AugmentedDocument:
    """Place a span immediately before or after the most salient sentence."""
    span = validate_span(span)
    if mode not in RELATIVE_MODES:
        raise InjectionError(f"{mode} is not a relative mode")
    if len(profile.scores) != len(seg.sentences):
        raise InjectionError(
            f"profile for {profile.doc_id!r} has {len(profile.scores)} scores "
            f"but document has {len(seg.sentences)} sentences"
        )
    si = profile.salient_index
    if mode is InjectionMode.REL_BEFORE:
        boundary = seg.sentences[si].char_start
    else:
        if si + 1 < len(seg.sentences):
            boundary = seg.sentences[si + 1].char_start
        else:
            boundary = len(seg.doc.text.encode("utf-8"))
    new_text, rng = _insert(seg.doc.text, span, boundary)
    return AugmentedDocument(
        original_doc_id=seg.doc.doc_id,
        augmented_id=augmented_id_for(seg.doc.doc_id, mode, span),
        text=new_text,
        injected_range=rng,
        mode=mode,
        salient_index_used=si,
    )


def inject(
    seg: SegmentedDocument,
    span: str,
    mode: InjectionMode,
    profile: SalienceProfile | None = None,
) -> AugmentedDocument:
    """Dispatch to absolute or relative injection based on mode."""
    if mode in ABSOLUTE_MODES:
        return inject_absolute(seg, span, mode, profile=profile)
    if profile is None:
        raise InjectionError(f"mode {mode.value} requires a salience profile")
    return inject_relative(seg, span, mode, profile)


def token_distance_to_salient(aug: AugmentedDocument, profile: SalienceProfile) -> int:
    """Whitespace tokens between the injected span and the salient sentence.

    Negative when the span precedes the salient sentence, zero when they
    are adjacent.
    """
    salient_index = aug.salient_index_used
    if salient_index is None:
        salient_index = profile.salient_index
    original = strip_injection(aug)
    sentences = split_sentences(original)
    if salient_index >= len(sentences):
        raise InjectionError(
            f"salient index {salient_index} out of range for {aug.original_doc_id!r}"
        )
    salient = sentences[salient_index]
    original_bytes = original.encode("utf-8")
    insertion_point = min(aug.injected_range[0], len(original_bytes))
    if insertion_point <= salient.char_start:
        gap = original_bytes[insertion_point:salient.char_start].decode("utf-8")
        return -len(gap.split())
    gap = original_bytes[salient.char_end:insertion_point].decode("utf-8")
    return len(gap.split())
