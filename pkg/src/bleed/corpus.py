"""Corpora, queries, qrels and runs in TREC-compatible formats.

Values are immutable after load and safe to share across workers. Text is
normalised to NFC on load; no other normalisation, so character offsets
stay stable for injection.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping


class CorpusError(ValueError):
    """Malformed input file or violated data invariant."""


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.doc_id or any(c.isspace() for c in self.doc_id):
            raise CorpusError(f"invalid doc_id {self.doc_id!r}: must be non-empty, no whitespace")
        if not self.text.strip():
            raise CorpusError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.query_id or any(c.isspace() for c in self.query_id):
            raise CorpusError(f"invalid query_id {self.query_id!r}")
        if not self.text.strip():
            raise CorpusError(f"query {self.query_id!r} has empty text")


class RelevanceBand(Enum):
    RELEVANT = "relevant"
    RELATED = "related"
    NON_RELEVANT = "non_relevant"


def relevance_band(grade: int, same_query: bool, max_grade: int = 3) -> RelevanceBand:
    """Map a judgment grade plus provenance to a relevance band.

    Grades 2..max are relevant and 0..1 related for same-query judgments;
    any cross-query judgment is non-relevant regardless of grade.
    """
    if grade < 0 or grade > max_grade:
        raise CorpusError(f"grade {grade} outside declared range 0..{max_grade}")
    if not same_query:
        return RelevanceBand.NON_RELEVANT
    return RelevanceBand.RELEVANT if grade >= 2 else RelevanceBand.RELATED


class Qrels:
    """Graded judgments keyed by (query_id, doc_id)."""

    def __init__(self, entries: Mapping[tuple[str, str], int], max_grade: int = 3):
        self.max_grade = max_grade
        self.entries: dict[tuple[str, str], int] = {}
        for (qid, did), grade in entries.items():
            if grade < 0 or grade > max_grade:
                raise CorpusError(f"qrels grade {grade} for ({qid}, {did}) outside 0..{max_grade}")
            key = (qid, did)
            if key in self.entries:
                raise CorpusError(f"duplicate qrels entry for ({qid}, {did})")
            self.entries[key] = grade

    def grade(self, query_id: str, doc_id: str, default: int = 0) -> int:
        return self.entries.get((query_id, doc_id), default)

    def judged(self, query_id: str) -> dict[str, int]:
        """doc_id -> grade for one query."""
        return {d: g for (q, d), g in self.entries.items() if q == query_id}

    def query_ids(self) -> list[str]:
        return sorted({q for q, _ in self.entries})

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class RunEntry:
    doc_id: str
    score: float
    rank: int


class Run:
    """Per-query ranked lists with contiguous ranks and non-increasing scores.

    Score ties are re-broken by ascending doc_id at construction so that
    downstream ranking arithmetic is deterministic.
    """

    def __init__(self, queries: Mapping[str, list[RunEntry]]):
        self.queries: dict[str, list[RunEntry]] = {}
        for qid, entries in queries.items():
            self.queries[qid] = self._validate(qid, entries)

    @staticmethod
    def _validate(qid: str, entries: list[RunEntry]) -> list[RunEntry]:
        ordered = sorted(entries, key=lambda e: e.rank)
        seen: set[str] = set()
        for i, e in enumerate(ordered):
            if e.rank != i + 1:
                raise CorpusError(f"run {qid}: ranks not contiguous at {e.doc_id} (rank {e.rank})")
            if e.doc_id in seen:
                raise CorpusError(f"run {qid}: duplicate doc_id {e.doc_id}")
            seen.add(e.doc_id)
            if i > 0 and e.score > ordered[i - 1].score:
                raise CorpusError(f"run {qid}: score increases at rank {e.rank}")
        # deterministic tie-break: equal scores ordered by ascending doc_id
        rebroken = sorted(ordered, key=lambda e: (-e.score, e.doc_id))
        return [RunEntry(e.doc_id, e.score, i + 1) for i, e in enumerate(rebroken)]

    def query_ids(self) -> list[str]:
        return list(self.queries)

    def entries(self, query_id: str) -> list[RunEntry]:
        return self.queries[query_id]

    def top_k(self, query_id: str, k: int) -> list[RunEntry]:
        return self.queries[query_id][:k]


def load_corpus(path: str | Path, fmt: str | None = None) -> list[Document]:
    """Load a corpus from TSV (``doc_id\\ttext``) or JSON-lines.

    Format is inferred from the suffix when not given. Raises CorpusError
    with a line number on any malformed row; duplicate ids are rejected.
    """
    path = Path(path)
    if fmt is None:
        fmt = "jsonl" if path.suffix in (".jsonl", ".json") else "tsv"
    if fmt not in ("tsv", "jsonl"):
        raise CorpusError(f"unknown corpus format {fmt!r}")

    docs: list[Document] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if fmt == "tsv":
                parts = line.split("\t", 1)
                if len(parts) != 2:
                    raise CorpusError(f"{path}:{lineno}: expected doc_id<TAB>text")
                doc_id, text = parts
            else:
                try:
                    record = json.loads(line)
                    doc_id, text = record["doc_id"], record["text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise CorpusError(f"{path}:{lineno}: bad jsonl record ({exc})") from exc
            if doc_id in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            seen.add(doc_id)
            try:
                docs.append(Document(doc_id, _nfc(text)))
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return docs


def save_corpus(docs: Iterable[Document], path: str | Path, fmt: str = "tsv") -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            if fmt == "tsv":
                if "\t" in doc.text or "\n" in doc.text:
                    raise CorpusError(f"document {doc.doc_id!r} contains tab/newline; use jsonl")
                fh.write(f"{doc.doc_id}\t{doc.text}\n")
            else:
                fh.write(json.dumps({"doc_id": doc.doc_id, "text": doc.text}, ensure_ascii=False) + "\n")


def load_queries(path: str | Path) -> list[Query]:
    """Load queries from TSV rows ``query_id\\ttext``."""
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise CorpusError(f"{path}:{lineno}: expected query_id<TAB>text")
            qid, text = parts
            if qid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate query_id {qid!r}")
            seen.add(qid)
            queries.append(Query(qid, _nfc(text)))
    return queries


def load_qrels(path: str | Path, max_grade: int = 3) -> Qrels:
    """Load TREC qrels rows ``qid 0 docid grade``."""
    entries: dict[tuple[str, str], int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise CorpusError(f"{path}:{lineno}: expected `qid 0 docid grade`")
            qid, _, did, grade_s = parts
            try:
                grade = int(grade_s)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: non-integer grade {grade_s!r}") from exc
            if grade < 0:
                raise CorpusError(f"{path}:{lineno}: negative grade {grade}")
            if grade > max_grade:
                raise CorpusError(f"{path}:{lineno}: grade {grade} above declared max {max_grade}")
            if (qid, did) in entries:
                raise CorpusError(f"{path}:{lineno}: duplicate qrels key ({qid}, {did})")
            entries[(qid, did)] = grade
    return Qrels(entries, max_grade=max_grade)


def save_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (qid, did), grade in qrels.entries.items():
            fh.write(f"{qid} 0 {did} {grade}\n")


def load_run(path: str | Path) -> Run:
    """Load a TREC run, rows ``qid Q0 docid rank score tag``."""
    queries: dict[str, list[RunEntry]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise CorpusError(f"{path}:{lineno}: expected `qid Q0 docid rank score tag`")
            qid, _, did, rank_s, score_s, _ = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: bad rank/score ({exc})") from exc
            queries.setdefault(qid, []).append(RunEntry(did, score, rank))
    try:
        return Run(queries)
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from exc


def save_run(run: Run, path: str | Path, tag: str = "bleed") -> None:
    """Write a TREC run with scores at 6 decimal places and \\n endings."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid in run.query_ids():
            for e in run.entries(qid):
                fh.write(f"{qid} Q0 {e.doc_id} {e.rank} {e.score:.6f} {tag}\n")
