"""Preference and retrieval metrics: ABNIRML, mean rank shift, nDCG@k,
MRR, MRPR, and paired t-tests with Bonferroni correction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import Qrels, Run, RunEntry


class MetricError(ValueError):
    pass


# triple: (doc_id, score_original, score_augmented); a TripleSet maps
# query_id to its list of triples
Triple = tuple[str, float, float]
TripleSet = Mapping[str, Sequence[Triple]]


def _sign(x: float) -> int:
    return (x > 0) - (x < 0)


def _flatten(triples: TripleSet | Iterable[Triple]) -> list[Triple]:
    if isinstance(triples, Mapping):
        flat = [t for qid in sorted(triples) for t in triples[qid]]
    else:
        flat = list(triples)
    for doc_id, orig, aug in flat:
        if not (math.isfinite(orig) and math.isfinite(aug)):
            raise MetricError(f"non-finite score for {doc_id!r}")
    return flat


def abnirml(triples: TripleSet | Iterable[Triple]) -> float:
    """Mean of sign(score_original - score_augmented) over all triples.

    Positive means the model prefers the originals; zero means the
    augmentation does not affect preference.
    """
    flat = _flatten(triples)
    if not flat:
        raise MetricError("abnirml needs at least one triple")
    return sum(_sign(orig - aug) for _, orig, aug in flat) / len(flat)


def mean_rank_shift(entries: Sequence[RunEntry], doc_id: str, augmented_score: float) -> int:
    """Rank change after substituting one document's score and re-sorting.

    Positive values are demotions. Ties re-break by ascending doc_id, the
    same rule used everywhere else.
    """
    old_rank = None
    pool: list[tuple[str, float]] = []
    for e in entries:
        if e.doc_id == doc_id:
            old_rank = e.rank
            pool.append((e.doc_id, augmented_score))
        else:
            pool.append((e.doc_id, e.score))
    if old_rank is None:
        raise MetricError(f"doc {doc_id!r} not present in run slice")
    pool.sort(key=lambda p: (-p[1], p[0]))
    new_rank = next(i + 1 for i, (d, _) in enumerate(pool) if d == doc_id)
    return new_rank - old_rank


def _ndcg_query(entries: Sequence[RunEntry], judged: Mapping[str, int], k: int) -> float:
    dcg = 0.0
    for i, e in enumerate(entries[:k]):
        grade = judged.get(e.doc_id, 0)
        dcg += (2**grade - 1) / math.log2(i + 2)
    ideal = sorted(judged.values(), reverse=True)[:k]
    idcg = sum((2**g - 1) / math.log2(i + 2) for i, g in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def ndcg_at_k(run: Run, qrels: Qrels, k: int = 10) -> float:
    """Exponential-gain nDCG@k averaged over the run's queries."""
    if k < 1:
        raise MetricError(f"k must be >= 1, got {k}")
    qids = run.query_ids()
    if not qids:
        raise MetricError("empty run")
    return sum(_ndcg_query(run.entries(q), qrels.judged(q), k) for q in qids) / len(qids)


def _first_hit_rank(entries: Sequence[RunEntry], is_hit, cutoff: int) -> int | None:
    for e in entries[:cutoff]:
        if is_hit(e.doc_id):
            return e.rank
    return None


def mrr(run: Run, qrels: Qrels, rel_threshold: int = 2, cutoff: int = 10) -> float:
    """Mean reciprocal rank of the first document at or above the grade threshold."""
    qids = run.query_ids()
    if not qids:
        raise MetricError("empty run")
    total = 0.0
    for qid in qids:
        judged = qrels.judged(qid)
        rank = _first_hit_rank(run.entries(qid), lambda d: judged.get(d, 0) >= rel_threshold, cutoff)
        total += 1.0 / rank if rank else 0.0
    return total / len(qids)


def mrpr(run: Run, augmented_ids: set[str], cutoff: int = 10) -> float:
    """MRR with membership in the augmented set as the relevance signal.

    Lower is better: a good defense pushes augmented documents out of the
    cutoff entirely.
    """
    if not augmented_ids:
        raise MetricError("augmented id set is empty")
    qids = run.query_ids()
    if not qids:
        raise MetricError("empty run")
    total = 0.0
    for qid in qids:
        rank = _first_hit_rank(run.entries(qid), lambda d: d in augmented_ids, cutoff)
        total += 1.0 / rank if rank else 0.0
    return total / len(qids)


# ---------------------------------------------------------------------------
# Paired t-test machinery. The Student-t CDF comes from a continued-fraction
# evaluation of the regularized incomplete beta function (abs err <= 1e-10).
# ---------------------------------------------------------------------------

_BETA_EPS = 1e-15
_BETA_TINY = 1e-300
_BETA_MAX_ITER = 500


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise MetricError("incomplete beta continued fraction failed to converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if x < 0.0 or x > 1.0:
        raise MetricError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: int) -> float:
    """Two-tailed p-value for a Student-t statistic with df degrees of freedom."""
    if df < 1:
        raise MetricError(f"df must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))
    return min(max(p, 0.0), 1.0)


@dataclass(frozen=True)
class SignificanceResult:
    t_statistic: float
    p_value: float
    adjusted_alpha: float
    significant: bool
    n: int
    family_size: int


def paired_t_test(deltas: Sequence[float], family_size: int = 1, alpha: float = 0.05) -> SignificanceResult:
    """One-sample t-test of paired deltas against zero, Bonferroni-corrected.

    Zero-variance deltas use the convention p=1 for a zero mean and p=0
    otherwise.
    """
    n = len(deltas)
    if n < 2:
        raise MetricError(f"paired t-test needs n >= 2, got {n}")
    if family_size < 1:
        raise MetricError(f"family size must be >= 1, got {family_size}")
    adjusted_alpha = alpha / family_size
    mean = sum(deltas) / n
    var = sum((d - mean) ** 2 for d in deltas) / (n - 1)
    sd = math.sqrt(var)
    if sd == 0.0:
        t = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        p = 1.0 if mean == 0.0 else 0.0
    else:
        t = mean / (sd / math.sqrt(n))
        p = t_two_tailed_p(t, n - 1)
    return SignificanceResult(
        t_statistic=t,
        p_value=p,
        adjusted_alpha=adjusted_alpha,
        significant=p < adjusted_alpha,
        n=n,
        family_size=family_size,
    )
