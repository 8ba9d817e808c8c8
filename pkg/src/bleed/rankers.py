"""Native BM25, the position-decay test scorer, and the adapter bridge,
behind one scoring contract.

The decay scorer is not part of any retrieval system; it exists to make
positional-bias claims analytically testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

from .corpus import Document, Query, RunEntry
from .segmenter import tokenize


class ScorerError(RuntimeError):
    """Scoring failed; carries how far a batch got before failing."""

    def __init__(self, message: str, scored: int = 0, total: int = 0):
        super().__init__(message)
        self.scored = scored
        self.total = total


@dataclass
class CorpusStats:
    """Collection statistics for BM25 over the candidate corpus."""

    doc_count: int
    avg_doc_len: float
    df: dict[str, int] = field(default_factory=dict)

    @classmethod
    def build(cls, docs: Iterable[Document]) -> "CorpusStats":
        df: dict[str, int] = {}
        total_len = 0
        n = 0
        for doc in docs:
            tokens = tokenize(doc.text)
            total_len += len(tokens)
            n += 1
            for term in set(tokens):
                df[term] = df.get(term, 0) + 1
        return cls(doc_count=n, avg_doc_len=total_len / n if n else 0.0, df=df)


def bm25_score(
    query: Query,
    doc: Document,
    stats: CorpusStats,
    k1: float = 1.2,
    b: float = 0.75,
) -> float:
    """Okapi BM25 with the non-negative log-idf variant.

    score = sum over unique query terms t of
        ln(1 + (N - df + 0.5)/(df + 0.5)) * tf*(k1+1) / (tf + k1*(1 - b + b*dl/avgdl))
    """
    if stats.doc_count == 0 or stats.avg_doc_len <= 0:
        raise ScorerError("corpus stats are empty; build them over the candidate corpus")
    doc_tokens = tokenize(doc.text)
    dl = len(doc_tokens)
    tf: dict[str, int] = {}
    for t in doc_tokens:
        tf[t] = tf.get(t, 0) + 1

    score = 0.0
    norm = k1 * (1 - b + b * dl / stats.avg_doc_len)
    for term in set(tokenize(query.text)):
        f = tf.get(term, 0)
        if f == 0:
            continue
        df_t = stats.df.get(term, 0)
        idf = math.log(1 + (stats.doc_count - df_t + 0.5) / (df_t + 0.5))
        score += idf * f * (k1 + 1) / (f + norm)
    return score


def decay_score(query: Query, doc: Document, gamma: float = 0.95) -> float:
    """Sum of gamma^i over 0-based doc token positions i holding a query term.

    Appending non-query tokens leaves the score unchanged; prepending k
    tokens multiplies every matched contribution by gamma^k.
    """
    if not 0 < gamma < 1:
        raise ScorerError(f"gamma must be in (0, 1), got {gamma}")
    query_terms = set(tokenize(query.text))
    return sum(gamma**i for i, tok in enumerate(tokenize(doc.text)) if tok in query_terms)


class SupportsScoring(Protocol):
    def score_batch(self, pairs: Sequence[tuple[str, str]]) -> list[float]: ...


class ScorerHandle:
    """Uniform contract over bm25, decay, and external adapter scorers."""

    def __init__(self, kind: str, stats: CorpusStats | None = None, **params):
        self.kind = kind
        self.stats = stats
        self.params = params

    @classmethod
    def bm25(cls, stats: CorpusStats, k1: float = 1.2, b: float = 0.75) -> "ScorerHandle":
        if k1 < 0:
            raise ScorerError(f"k1 must be >= 0, got {k1}")
        if not 0 <= b <= 1:
            raise ScorerError(f"b must be in [0, 1], got {b}")
        return cls("bm25", stats=stats, k1=k1, b=b)

    @classmethod
    def decay(cls, gamma: float = 0.95) -> "ScorerHandle":
        if not 0 < gamma < 1:
            raise ScorerError(f"gamma must be in (0, 1), got {gamma}")
        return cls("decay", gamma=gamma)

    @classmethod
    def adapter(cls, session: SupportsScoring) -> "ScorerHandle":
        return cls("adapter", session=session)

    def score_batch(self, query: Query, docs: Sequence[Document]) -> list[float]:
        if self.kind == "bm25":
            return [bm25_score(query, d, self.stats, **self.params) for d in docs]
        if self.kind == "decay":
            return [decay_score(query, d, self.params["gamma"]) for d in docs]
        if self.kind == "adapter":
            session = self.params["session"]
            try:
                return session.score_batch([(query.text, d.text) for d in docs])
            except Exception as exc:
                raise ScorerError(
                    f"adapter scoring failed for query {query.query_id!r}: {exc}",
                    scored=0,
                    total=len(docs),
                ) from exc
        raise ScorerError(f"unknown scorer kind {self.kind!r}")

    def score(self, query: Query, doc: Document) -> float:
        return self.score_batch(query, [doc])[0]


def rerank(query: Query, candidates: Sequence[Document], scorer: ScorerHandle) -> list[RunEntry]:
    """Score candidates and order them by descending score, doc_id ascending on ties."""
    if not candidates:
        raise ScorerError(f"no candidates for query {query.query_id!r}")
    scores = scorer.score_batch(query, candidates)
    order = sorted(zip(candidates, scores), key=lambda pair: (-pair[1], pair[0].doc_id))
    return [RunEntry(doc.doc_id, float(score), i + 1) for i, (doc, score) in enumerate(order)]
