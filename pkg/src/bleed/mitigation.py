"""Classifier-fused mitigation: sliding-window promotion probability,
per-query score normalization, alpha-weighted fusion, pseudo-corpus
construction, and alpha tuning."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

from .corpus import Document, RunEntry
from .injector import AugmentedDocument, InjectionMode, inject
from .salience import EmbeddingProvider, salience_scores
from .segmenter import SegmentedDocument, segment, tokenize


class MitigationError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.1
    window_sentences: int = 3
    stride: int = 1
    normalization: str = "min-max"

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise MitigationError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.window_sentences < 1 or self.stride < 1:
            raise MitigationError("window size and stride must be >= 1")
        if self.normalization != "min-max":
            raise MitigationError(f"unsupported normalization {self.normalization!r}")


@dataclass(frozen=True)
class PromotionVerdict:
    doc_id: str
    window_probs: tuple[float, ...]
    prob: float


def windows(seg: SegmentedDocument, window_sentences: int, stride: int) -> list[str]:
    """Sliding windows of consecutive sentences as text spans.

    Starts advance by the stride (capped at the window size so every
    sentence is covered); one final partial window is added when sentences
    would otherwise be left uncovered.
    """
    if window_sentences < 1 or stride < 1:
        raise MitigationError("window size and stride must be >= 1")
    sentences = seg.sentences
    n = len(sentences)
    if n == 0:
        return []
    step = min(stride, window_sentences)
    starts = list(range(0, max(n - window_sentences, 0) + 1, step))
    last_covered = starts[-1] + window_sentences
    if last_covered < n:
        starts.append(starts[-1] + step)

    doc_bytes = seg.doc.text.encode("utf-8")
    spans = []
    for s in starts:
        end = min(s + window_sentences, n) - 1
        spans.append(doc_bytes[sentences[s].char_start:sentences[end].char_end].decode("utf-8"))
    return spans


class ClassifierHandle(Protocol):
    def classify_batch(self, texts: Sequence[str]) -> list[float]: ...


DEFAULT_PROMOTION_LEXICON = (
    "best", "premium", "buy", "exclusive", "luxury", "deal", "offer",
    "discount", "sale", "amazing", "perfect", "guaranteed", "free",
)


class BuiltinPromotionClassifier:
    """Lexical test fixture, not a trained-classifier replacement.

    Logistic over lexicon hit counts with a length penalty so dense
    promotional windows score above whole documents that dilute the
    signal.
    """

    def __init__(
        self,
        lexicon: Sequence[str] = DEFAULT_PROMOTION_LEXICON,
        brand_terms: Sequence[str] = (),
        length_penalty: float = 0.05,
        bias: float = 1.0,
    ):
        self.terms = {t.lower() for t in lexicon}
        for brand in brand_terms:
            self.terms.update(tokenize(brand))
        self.length_penalty = length_penalty
        self.bias = bias

    def classify(self, text: str) -> float:
        tokens = tokenize(text)
        hits = sum(1 for t in tokens if t in self.terms)
        z = hits - self.length_penalty * len(tokens) - self.bias
        return 1.0 / (1.0 + math.exp(-z))

    def classify_batch(self, texts: Sequence[str]) -> list[float]:
        return [self.classify(t) for t in texts]


class AdapterClassifier:
    """Classifier backed by an adapter session with the classify capability."""

    def __init__(self, session):
        self.session = session

    def classify_batch(self, texts: Sequence[str]) -> list[float]:
        return [self.session.classify(t) for t in texts]


def promotion_probability(
    seg: SegmentedDocument,
    classifier: ClassifierHandle,
    cfg: FusionConfig,
) -> PromotionVerdict:
    """Max window classification; promotion anywhere flags the whole document."""
    spans = windows(seg, cfg.window_sentences, cfg.stride)
    if not spans:
        return PromotionVerdict(seg.doc.doc_id, (), 0.0)
    probs = classifier.classify_batch(spans)
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise MitigationError(f"classifier probability {p} out of [0, 1]")
    return PromotionVerdict(seg.doc.doc_id, tuple(probs), max(probs))


def _verdict_prob(verdicts: Mapping[str, object], doc_id: str) -> float:
    if doc_id not in verdicts:
        raise MitigationError(f"missing promotion verdict for {doc_id!r}")
    v = verdicts[doc_id]
    return v.prob if isinstance(v, PromotionVerdict) else float(v)


def minmax_normalize(scores: Sequence[float]) -> list[float]:
    """Scale to [0, 1]; a constant column maps to all 0.5."""
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [0.5] * len(scores)
    return [(s - lo) / (hi - lo) for s in scores]


def fuse_scores(
    entries: Sequence[RunEntry],
    verdicts: Mapping[str, object],
    alpha: float,
) -> list[RunEntry]:
    """Interpolate normalized relevance with the promotion-probability complement.

    fused = alpha * norm_score + (1 - alpha) * (1 - prob), then re-sort.
    alpha = 1 disables the classifier and reproduces the input ordering.
    """
    if not 0.0 <= alpha <= 1.0:
        raise MitigationError(f"alpha must be in [0, 1], got {alpha}")
    if not entries:
        return []
    normed = minmax_normalize([e.score for e in entries])
    fused = []
    for e, ns in zip(entries, normed):
        prob = _verdict_prob(verdicts, e.doc_id)
        fused.append((e.doc_id, alpha * ns + (1.0 - alpha) * (1.0 - prob)))
    # min-max is monotone and every producer breaks ties by doc_id, so
    # alpha = 1 reproduces the input ordering exactly
    fused.sort(key=lambda p: (-p[1], p[0]))
    return [RunEntry(d, s, i + 1) for i, (d, s) in enumerate(fused)]


def build_pseudo_corpus(
    topk: Sequence[Document],
    span: str,
    mode: InjectionMode,
    provider: EmbeddingProvider | None = None,
) -> list[Document | AugmentedDocument]:
    """Pair every top-k document with its augmented counterpart (2n total)."""
    out: list[Document | AugmentedDocument] = []
    seen: set[str] = set()
    for doc in topk:
        seg = segment(doc)
        profile = None
        if mode in (InjectionMode.REL_BEFORE, InjectionMode.REL_AFTER):
            if provider is None:
                raise MitigationError(f"mode {mode.value} needs an embedding provider")
            profile = salience_scores(seg, provider)
        aug = inject(seg, span, mode, profile=profile)
        for item in (doc, aug):
            if item.doc_id in seen:
                raise MitigationError(f"pseudo-corpus id collision on {item.doc_id!r}")
            seen.add(item.doc_id)
            out.append(item)
    return out


def tune_alpha(
    grid: Sequence[float],
    eval_fn: Callable[[float], float],
) -> tuple[float, list[tuple[float, float]]]:
    """Sweep the grid and pick the alpha maximising eval_fn (nDCG@10 in the
    studies); ties go to the largest alpha, the least intervention."""
    if not grid:
        raise MitigationError("alpha grid is empty")
    for a in grid:
        if not 0.0 <= a <= 1.0:
            raise MitigationError(f"alpha {a} outside [0, 1]")
    sweep = [(float(a), float(eval_fn(a))) for a in grid]
    best_alpha, _ = max(sweep, key=lambda pair: (pair[1], pair[0]))
    return best_alpha, sweep
