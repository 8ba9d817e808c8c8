import math
import random

import pytest
from hypothesis import given, strategies as st
from scipy import stats as scipy_stats

from bleed.corpus import Qrels, Run, RunEntry
from bleed.metrics import (
    MetricError, abnirml, mean_rank_shift, mrpr, mrr,
    ndcg_at_k, paired_t_test, regularized_incomplete_beta, t_two_tailed_p,
)


# -- ABNIRML ----------------------------------------------------------------

def test_abnirml_identical_columns_zero():
    assert abnirml([("d1", 1.0, 1.0), ("d2", 2.0, 2.0)]) == 0.0


def test_abnirml_all_preferred():
    assert abnirml([("d1", 3.0, 2.5), ("d2", 2.0, 1.0)]) == 1.0


def test_abnirml_sign_arithmetic():
    assert abnirml([("a", 1, 2), ("b", 2, 2), ("c", 3, 1)]) == 0.0


def test_abnirml_mapping_input():
    triples = {"q2": [("d", 1.0, 0.0)], "q1": [("d", 0.0, 1.0)]}
    assert abnirml(triples) == 0.0


def test_abnirml_empty_error():
    with pytest.raises(MetricError):
        abnirml([])


def test_abnirml_monotone_transform_invariance():
    triples = [("a", 0.2, 0.9), ("b", 1.5, 0.4), ("c", 2.0, 2.0)]
    base = abnirml(triples)
    transformed = [(d, math.exp(o), math.exp(a)) for d, o, a in triples]
    assert abnirml(transformed) == base


# -- mean rank shift ---------------------------------------------------------

def _slice(scores):
    entries = [RunEntry(f"d{i}", s, 0) for i, s in enumerate(scores)]
    ordered = sorted(entries, key=lambda e: (-e.score, e.doc_id))
    return [RunEntry(e.doc_id, e.score, i + 1) for i, e in enumerate(ordered)]


def test_mrs_unchanged_score_zero():
    entries = _slice([5.0, 4.0, 3.0])
    for e in entries:
        assert mean_rank_shift(entries, e.doc_id, e.score) == 0


def test_mrs_drop_below_all():
    # d at rank 2 of 5 demoted below everything lands at rank 5: shift +3
    entries = _slice([10.0, 8.0, 6.0, 4.0, 2.0])
    target = entries[1].doc_id
    assert mean_rank_shift(entries, target, 1.0) == 3


def test_mrs_absent_doc_error():
    with pytest.raises(MetricError):
        mean_rank_shift(_slice([1.0]), "nope", 0.5)


def test_mrs_against_bruteforce_resort():
    rng = random.Random(13)
    for _ in range(1000):
        n = rng.randint(1, 12)
        scores = [round(rng.uniform(0, 10), 3) for _ in range(n)]
        entries = _slice(scores)
        target = rng.choice(entries)
        new_score = round(rng.uniform(0, 10), 3)
        got = mean_rank_shift(entries, target.doc_id, new_score)
        pool = [(e.doc_id, new_score if e.doc_id == target.doc_id else e.score) for e in entries]
        pool.sort(key=lambda p: (-p[1], p[0]))
        brute = next(i + 1 for i, (d, _) in enumerate(pool) if d == target.doc_id) - target.rank
        assert got == brute


# -- nDCG ---------------------------------------------------------------------

def _run_one(doc_scores):
    entries = [RunEntry(d, s, i + 1) for i, (d, s) in enumerate(doc_scores)]
    return Run({"q1": entries})


def test_ndcg_hand_case():
    # grades at ranks [3, 0, 2] against ideal [3, 2, 0]
    run = _run_one([("a", 3.0), ("b", 2.0), ("c", 1.0)])
    qrels = Qrels({("q1", "a"): 3, ("q1", "b"): 0, ("q1", "c"): 2})
    dcg = 7 / math.log2(2) + 0 / math.log2(3) + 3 / math.log2(4)
    idcg = 7 / math.log2(2) + 3 / math.log2(3)
    expected = dcg / idcg
    assert dcg == pytest.approx(8.5)
    assert round(expected, 4) == 0.9558
    assert ndcg_at_k(run, qrels, k=10) == pytest.approx(expected, abs=1e-12)


def test_ndcg_ideal_is_one():
    run = _run_one([("a", 3.0), ("b", 2.0), ("c", 1.0)])
    qrels = Qrels({("q1", "a"): 3, ("q1", "b"): 2, ("q1", "c"): 0})
    assert ndcg_at_k(run, qrels) == 1.0


def test_ndcg_all_zero_grades():
    run = _run_one([("a", 3.0), ("b", 2.0)])
    qrels = Qrels({("q1", "a"): 0, ("q1", "b"): 0})
    assert ndcg_at_k(run, qrels) == 0.0


def test_ndcg_invariant_below_cutoff():
    docs = [(f"d{i:02d}", 100.0 - i) for i in range(15)]
    qrels = Qrels({("q1", "d00"): 3, ("q1", "d12"): 2})
    base = ndcg_at_k(_run_one(docs), qrels, k=10)
    swapped = docs[:12] + [docs[13], docs[12], docs[14]]
    resc = [(d, 100.0 - i) for i, (d, _) in enumerate(swapped)]
    assert ndcg_at_k(_run_one(resc), qrels, k=10) == pytest.approx(base)


# -- MRR / MRPR ----------------------------------------------------------------

def test_mrr_cases():
    docs = [(f"d{i}", 10.0 - i) for i in range(12)]
    run = _run_one(docs)
    assert mrr(run, Qrels({("q1", "d3"): 2})) == 0.25
    assert mrr(run, Qrels({("q1", "d0"): 3})) == 1.0
    assert mrr(run, Qrels({("q1", "d11"): 3})) == 0.0  # outside cutoff 10
    assert mrr(run, Qrels({("q1", "d0"): 1})) == 0.0   # below threshold


def test_mrpr_cases():
    docs = [(f"d{i}", 10.0 - i) for i in range(12)]
    run = _run_one(docs)
    assert mrpr(run, {"d0"}) == 1.0
    assert mrpr(run, {"d4"}) == 0.2
    assert mrpr(run, {"d11"}) == 0.0
    with pytest.raises(MetricError):
        mrpr(run, set())


def test_mrpr_monotone_under_demotion():
    docs = [("aug1", 9.0), ("c1", 8.0), ("c2", 7.0), ("aug2", 6.0)]
    run = _run_one(docs)
    before = mrpr(run, {"aug1", "aug2"})
    demoted = _run_one([("c1", 8.0), ("c2", 7.0), ("aug2", 6.0), ("aug1", 1.0)])
    assert mrpr(demoted, {"aug1", "aug2"}) <= before


# -- paired t test ----------------------------------------------------------------

def test_t_test_oracle_case():
    result = paired_t_test([1, 2, 3, 4, 5])
    t_ref, p_ref = scipy_stats.ttest_1samp([1, 2, 3, 4, 5], 0.0)
    assert result.t_statistic == pytest.approx(4.2426, abs=1e-4)
    assert result.t_statistic == pytest.approx(t_ref, abs=1e-12)
    assert result.p_value == pytest.approx(0.0132, abs=1e-3)
    assert result.p_value == pytest.approx(p_ref, abs=1e-10)
    assert result.n == 5


def test_t_test_bonferroni_adjustment():
    # the invariant significant <=> p < alpha/m governs; with p ~ 0.0132 the
    # m=3 threshold 0.0167 still admits it
    result = paired_t_test([1, 2, 3, 4, 5], family_size=3)
    assert result.adjusted_alpha == pytest.approx(0.05 / 3)
    assert result.significant is (result.p_value < result.adjusted_alpha)


def test_t_test_all_zero():
    result = paired_t_test([0.0, 0.0, 0.0])
    assert result.t_statistic == 0.0
    assert result.p_value == 1.0
    assert not result.significant


def test_t_test_zero_variance_nonzero_mean():
    result = paired_t_test([2.0, 2.0, 2.0])
    assert result.p_value == 0.0
    assert result.significant


def test_t_test_needs_two():
    with pytest.raises(MetricError):
        paired_t_test([1.0])


def test_bonferroni_identity_at_one():
    result = paired_t_test([0.1, -0.2, 0.3, 0.5], family_size=1)
    assert result.adjusted_alpha == 0.05


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=30))
def test_t_test_matches_scipy(deltas):
    ours = paired_t_test(deltas)
    if all(d == deltas[0] for d in deltas):
        return  # conventions differ from scipy (nan) on zero variance
    t_ref, p_ref = scipy_stats.ttest_1samp(deltas, 0.0)
    assert ours.t_statistic == pytest.approx(t_ref, rel=1e-9, abs=1e-9)
    assert ours.p_value == pytest.approx(p_ref, rel=1e-7, abs=1e-10)
    assert 0.0 <= ours.p_value <= 1.0


def test_incomplete_beta_matches_scipy_grid():
    from scipy.special import betainc
    for a in (0.5, 1.0, 2.0, 7.5, 40.0):
        for b in (0.5, 1.0, 3.0):
            for i in range(1, 20):
                x = i / 20
                ours = regularized_incomplete_beta(a, b, x)
                assert ours == pytest.approx(betainc(a, b, x), abs=1e-10)


def test_t_cdf_edge_cases():
    assert t_two_tailed_p(0.0, 4) == 1.0
    assert t_two_tailed_p(math.inf, 4) == 0.0
    assert t_two_tailed_p(-3.0, 7) == t_two_tailed_p(3.0, 7)
