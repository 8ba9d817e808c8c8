"""Adapter conformance checks, reusable against any adapter command.

Each check exercises one capability of the wire protocol and returns a
list of human-readable failures (empty means conformant). Backends under
development run these before being wired into studies.
"""

from __future__ import annotations

import math
from typing import Sequence

from .adapters import AdapterSession

PROBE_QUERY = "what is the capital of france"
PROBE_TEXTS = (
    "Paris is the capital of France.",
    "The mitochondria is the powerhouse of the cell.",
    "France is a country in Europe and its capital is Paris.",
    "Completely unrelated text about motorcycles.",
)
PROBE_PROMPT = "Document: The sky is blue.\nItem: Acme\nResponse:"


def check_handshake(session: AdapterSession) -> list[str]:
    failures = []
    if not session.name:
        failures.append("handshake reply lacks a name")
    if not session.capabilities:
        failures.append("handshake declares no ops")
    if "embed" in session.capabilities and not session.embed_dim:
        failures.append("embed declared without dim")
    return failures


def check_score(session: AdapterSession) -> list[str]:
    failures = []
    pairs = [(PROBE_QUERY, t) for t in PROBE_TEXTS]
    first = session.score_batch(pairs)
    if len(first) != len(pairs):
        failures.append(f"score_batch returned {len(first)} results for {len(pairs)} pairs")
    if any(not math.isfinite(s) for s in first):
        failures.append(f"score_batch returned non-finite scores: {first}")
    second = session.score_batch(pairs)
    if first != second:
        failures.append(f"score_batch not deterministic: {first} vs {second}")
    return failures


def check_classify(session: AdapterSession) -> list[str]:
    failures = []
    for text in PROBE_TEXTS[:2]:
        prob = session.classify(text)
        if not 0.0 <= prob <= 1.0:
            failures.append(f"classify returned {prob} outside [0, 1]")
        if prob != session.classify(text):
            failures.append("classify not deterministic")
    return failures


def check_embed(session: AdapterSession) -> list[str]:
    failures = []
    vec = session.embed(PROBE_TEXTS[0])
    if len(vec) != session.embed_dim:
        failures.append(f"embed length {len(vec)} != declared dim {session.embed_dim}")
    if any(not math.isfinite(v) for v in vec):
        failures.append("embed returned non-finite entries")
    if vec != session.embed(PROBE_TEXTS[0]):
        failures.append("embed not deterministic")
    return failures


def check_generate(session: AdapterSession) -> list[str]:
    failures = []
    text = session.generate(PROBE_PROMPT, max_tokens=128)
    if not isinstance(text, str):
        failures.append(f"generate returned non-string {type(text)}")
    return failures


_CHECKS = {
    "score": check_score,
    "classify": check_classify,
    "embed": check_embed,
    "generate": check_generate,
}


def run_conformance(command: str | Sequence[str], timeout_ms: int | None = None) -> list[str]:
    """Handshake plus one check per declared capability; returns failures."""
    with AdapterSession(command, timeout_ms=timeout_ms) as session:
        failures = check_handshake(session)
        for op in sorted(session.capabilities):
            failures.extend(_CHECKS[op](session))
    # session restart must replay identically for deterministic adapters
    with AdapterSession(command, timeout_ms=timeout_ms) as session:
        if "score" in session.capabilities:
            failures.extend(check_score(session))
    return failures


def assert_conformant(command: str | Sequence[str], timeout_ms: int | None = None) -> None:
    failures = run_conformance(command, timeout_ms=timeout_ms)
    if failures:
        raise AssertionError("adapter conformance failures:\n- " + "\n- ".join(failures))
