"""Contextualised promotional span generation: prompt construction,
generator adapters (wire protocol or OpenAI-compatible HTTP), and
post-processing into single-sentence spans."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

import requests

from .adapters import AdapterError, AdapterTimeout, ProtocolError
from .segmenter import truncate_to_first_sentence

PROMPT_TEMPLATE = (
    "Using the important keywords taken from the Document, write a sentence "
    "mentioning and promoting the Item: \n"
    "Document: {document}\n"
    "Item: {item}\n"
    "Response: Okay, here is a sentence promoting the item whilst using "
    "important terms from the document"
)

REFUSAL_PREFIXES = ("i cannot", "i can't", "i am sorry", "i'm sorry")


class GenerationError(RuntimeError):
    pass


class RefusalError(GenerationError):
    """The generator produced nothing or refused; raw output preserved."""

    def __init__(self, raw: str):
        super().__init__(f"generator refused or returned empty text: {raw!r}")
        self.raw = raw


@dataclass(frozen=True)
class PromotionItem:
    name: str
    static_span: str | None = None

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise GenerationError("promotion item name must be non-empty")


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    max_tokens: int = 128
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise GenerationError(f"max_tokens must be >= 1, got {self.max_tokens}")


def build_prompt(document_text: str, item: str) -> str:
    """Fill the fixed contextualisation template; the trailing priming
    sentence is part of the prompt and bypasses refusals."""
    if not document_text.strip() or not item.strip():
        raise GenerationError("document text and item must both be non-empty")
    return PROMPT_TEMPLATE.format(document=document_text, item=item)


class SupportsGenerate(Protocol):
    def generate(self, prompt: str, max_tokens: int = 128) -> str: ...


def _looks_like_refusal(text: str) -> bool:
    stripped = text.strip().lower()
    return not stripped or any(stripped.startswith(p) for p in REFUSAL_PREFIXES)


def generate_span(
    req: GenerationRequest,
    adapter: SupportsGenerate,
    retries: int = 3,
    backoff_s: float = 0.5,
) -> str:
    """Call the generator and truncate the output to a single sentence.

    Transport errors retry with exponential backoff; protocol violations
    and refusals do not.
    """
    attempt = 0
    while True:
        attempt += 1
        try:
            raw = adapter.generate(req.prompt, req.max_tokens)
            break
        except ProtocolError:
            raise
        except (AdapterTimeout, AdapterError, requests.RequestException) as exc:
            if attempt >= retries:
                raise GenerationError(f"generation failed after {attempt} attempts: {exc}") from exc
            time.sleep(backoff_s * 2 ** (attempt - 1))
    if _looks_like_refusal(raw):
        raise RefusalError(raw)
    return truncate_to_first_sentence(raw)


class HttpGenerator:
    """OpenAI-compatible chat-completions client; the prompt goes out as a
    single user message and the first choice's text comes back.

    Decoding knobs beyond max_tokens cannot ride the wire protocol, so they
    are given here and merged opaquely into every request payload.
    """

    def __init__(self, url: str, model: str = "", api_key: str | None = None,
                 timeout_s: float = 30.0, default_options: dict | None = None):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.default_options = dict(default_options or {})

    def generate(self, prompt: str, max_tokens: int = 128) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_tokens,
            **self.default_options,
        }
        response = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout_s)
        response.raise_for_status()
        body = response.json()
        try:
            choice = body["choices"][0]
            if "message" in choice:
                return choice["message"]["content"] or ""
            return choice.get("text", "") or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise GenerationError(f"malformed completion response: {body!r}") from exc


# spans.tsv rows: doc_id, item, span
def save_spans(rows: Iterable[tuple[str, str, str]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        for doc_id, item, span in rows:
            writer.writerow([doc_id, item, span])


def load_spans(path: str | Path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row:
                continue
            if len(row) != 3:
                raise GenerationError(f"{path}:{lineno}: expected doc_id<TAB>item<TAB>span")
            rows.append((row[0], row[1], row[2]))
    return rows
