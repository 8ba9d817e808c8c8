"""Per-sentence salience scores and salient-sentence selection.

The built-in provider embeds text as an L2-normalised hashed
term-frequency vector (FNV-1a into 256 buckets); external providers plug
in through the adapter protocol. Salience of a sentence is the dot
product of its embedding with the whole-document embedding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .segmenter import SegmentedDocument, tokenize

HASH_DIM = 256

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


def fnv1a_bucket(token: str, dim: int = HASH_DIM) -> int:
    """32-bit FNV-1a hash of the token's UTF-8 bytes, folded into dim buckets."""
    h = _FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h % dim


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedTfEmbedder:
    """Deterministic hashed term-frequency embedding; the desk-scale stand-in
    for a sentence-embedding model."""

    def __init__(self, dim: int = HASH_DIM):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            vec[fnv1a_bucket(token, self.dim)] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class AdapterEmbedder:
    """Embedding provider backed by an adapter session with the embed capability."""

    def __init__(self, session):
        self.session = session
        self.dim = session.embed_dim

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self.session.embed(text), dtype=np.float64)


class SalienceError(ValueError):
    pass


@dataclass(frozen=True)
class SalienceProfile:
    doc_id: str
    scores: tuple[float, ...]
    salient_index: int


def embed(text: str, provider: EmbeddingProvider) -> np.ndarray:
    vec = np.asarray(provider.embed(text), dtype=np.float64)
    if vec.shape != (provider.dim,):
        raise SalienceError(f"provider returned shape {vec.shape}, expected ({provider.dim},)")
    if not np.all(np.isfinite(vec)):
        raise SalienceError("embedding contains non-finite entries")
    return vec


def salience_scores(
    seg: SegmentedDocument,
    provider: EmbeddingProvider,
    comparand: str = "document",
) -> SalienceProfile:
    """Score each sentence by dot product with the document embedding.

    comparand="centroid" dots against the mean sentence embedding instead.
    The salient index is the argmax with ties broken by lowest index.
    """
    if not seg.sentences:
        raise SalienceError(f"document {seg.doc.doc_id!r} has no sentences")
    if comparand not in ("document", "centroid"):
        raise SalienceError(f"unknown comparand {comparand!r}")

    sentence_vecs = [embed(s.text, provider) for s in seg.sentences]
    if comparand == "document":
        target = embed(seg.doc.text, provider)
    else:
        target = np.mean(sentence_vecs, axis=0)

    scores = tuple(float(np.dot(v, target)) for v in sentence_vecs)
    salient_index = int(np.argmax(scores))  # argmax takes the first maximum
    return SalienceProfile(seg.doc.doc_id, scores, salient_index)


def save_profiles(profiles: Iterable[SalienceProfile], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in profiles:
            record = {"doc_id": p.doc_id, "scores": list(p.scores), "salient_index": p.salient_index}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_profiles(path: str | Path) -> dict[str, SalienceProfile]:
    profiles: dict[str, SalienceProfile] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            profiles[record["doc_id"]] = SalienceProfile(
                record["doc_id"], tuple(record["scores"]), record["salient_index"]
            )
    return profiles
