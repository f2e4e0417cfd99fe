import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import fairness_direct, ndcg_direct, precision_direct
from fairrank.data import ItemRecord, QueryGroup
from fairrank.metrics import (EmptySubgroupError, FairnessKind, ItemValueTable, RankedQuery,
                              empirical_fairness, evaluate_rankings, mean_metric, ndcg_at_k,
                              precision_at_k, rank_by_score, topk_indicator)


def ranked(rels, protected=None):
    protected = [0] * len(rels) if protected is None else protected
    return RankedQuery("q", [f"d{i}" for i in range(len(rels))], rels, protected)


def group(doc_ids, rels=None):
    rels = rels or [0] * len(doc_ids)
    return QueryGroup("q", tuple(ItemRecord("q", d, (0.0,), r, 0) for d, r in zip(doc_ids, rels)))


def test_rank_by_score_descending():
    out = rank_by_score(group(["a", "b"]), [0.1, 0.9])
    assert out.doc_ids == ("b", "a")


def test_rank_by_score_ties_by_doc_id():
    out = rank_by_score(group(["b", "a"]), [0.5, 0.5])
    assert out.doc_ids == ("a", "b")


def test_rank_by_score_permutation_invariant(rng):
    ids = [f"d{i}" for i in range(7)]
    scores = rng.integers(0, 3, size=7).astype(float)
    base = rank_by_score(group(ids), scores).doc_ids
    for _ in range(5):
        perm = rng.permutation(7)
        assert rank_by_score(group([ids[i] for i in perm]), scores[perm]).doc_ids == base


def test_rank_by_score_rejects_nonfinite():
    with pytest.raises(ValueError):
        rank_by_score(group(["a", "b"]), [0.1, np.nan])


def test_precision_examples():
    assert precision_at_k(ranked([1, 0, 1]), 3) == pytest.approx(2 / 3)
    assert precision_at_k(ranked([1, 1, 1, 1]), 3) == 1.0
    assert precision_at_k(ranked([1, 1]), 5) == precision_direct([1, 1], 5) == 0.4


def test_ndcg_worked_example():
    value = ndcg_at_k(ranked([1, 0, 1]), 3)
    assert value == pytest.approx(1.5 / (1 + 1 / math.log2(3)), abs=1e-12)
    assert value == pytest.approx(0.91972, abs=1e-5)


def test_ndcg_ideal_and_empty():
    assert ndcg_at_k(ranked([1, 1, 0, 0]), 3) == 1.0
    assert ndcg_at_k(ranked([0, 0, 0]), 2) is None


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        precision_at_k(ranked([1]), 0)


def test_mean_metric():
    assert mean_metric([0.5, None, 1.0]) == 0.75
    assert mean_metric([0.3]) == 0.3
    with pytest.raises(ValueError):
        mean_metric([None, None])


def test_topk_indicator():
    ind = topk_indicator(ranked([0, 1, 0, 1]), 2)
    np.testing.assert_array_equal(ind, [1, 1, 0, 0])
    np.testing.assert_array_equal(topk_indicator(ranked([0, 1]), 5), [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=8), st.integers(1, 10))
def test_topk_count(rels, k):
    assert topk_indicator(ranked(rels), k).sum() == min(k, len(rels))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=6), st.integers(1, 8))
def test_metrics_match_direct_formulas(rels, k):
    r = ranked(rels)
    assert precision_at_k(r, k) == pytest.approx(precision_direct(rels, k), abs=1e-12)
    expected = ndcg_direct(rels, k)
    got = ndcg_at_k(r, k)
    if expected is None:
        assert got is None
    else:
        assert got == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("m", range(1, 7))
def test_ndcg_brute_force_permutations(m):
    for n_rel in range(1, m + 1):
        items = [1] * n_rel + [0] * (m - n_rel)
        for k in range(1, m + 2):
            best = None
            for perm in set(itertools.permutations(items)):
                v = ndcg_at_k(ranked(list(perm)), k)
                assert 0.0 <= v <= 1.0 + 1e-15
                ideal_prefix = all(perm[j] == 1 for j in range(min(k, n_rel)))
                assert (v == 1.0) == ideal_prefix
                best = v if best is None else max(best, v)
            assert ndcg_at_k(ranked(sorted(items, reverse=True)), k) == best


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=2, max_size=8), st.integers(1, 8), st.data())
def test_ndcg_monotone_promotion(rels, k, data):
    relevant = [j for j, r in enumerate(rels) if r == 1 and j > 0]
    if not relevant:
        return
    j = data.draw(st.sampled_from(relevant))
    i = data.draw(st.integers(0, j - 1))
    if rels[i] == 1:
        return
    moved = list(rels)
    moved[i], moved[j] = moved[j], moved[i]
    assert ndcg_at_k(ranked(moved), k) >= ndcg_at_k(ranked(rels), k)


# ---------------------------------------------------------------------------
# fairness


def table(p, r, v):
    return ItemValueTable(np.array(p), np.array(r), np.array(v, dtype=float))


def test_eop_worked_example():
    t = table([0, 0, 1, 1], [1, 1, 1, 1], [1.0, 0.0, 1.0, 1.0])
    assert empirical_fairness(t, "eop") == 0.5
    assert fairness_direct(t.protected, t.relevance, t.values, "eop") == 0.5


@pytest.mark.parametrize("kind", list(FairnessKind))
def test_constant_values_are_fair(kind):
    t = table([0, 0, 1, 1, 0, 1], [0, 1, 0, 1, 1, 0], [0.3] * 6)
    assert empirical_fairness(t, kind) == 0.0


def test_empty_subgroup_named():
    t = table([0, 0, 1], [1, 0, 0], [1.0, 0.0, 1.0])
    with pytest.raises(EmptySubgroupError, match=r"a=1, r=1"):
        empirical_fairness(t, "eop")
    with pytest.raises(EmptySubgroupError, match=r"a=1, r=1"):
        empirical_fairness(t, "eod")
    assert empirical_fairness(t, "dp") == 0.5


def test_eod_averages_both_relevance_classes():
    t = table([0, 1, 0, 1], [0, 0, 1, 1], [0.2, 0.6, 0.9, 0.5])
    assert empirical_fairness(t, "eod") == pytest.approx(0.5 * (0.4 + 0.4))


def random_table(rng, n, binary):
    p = rng.integers(0, 2, n)
    r = rng.integers(0, 2, n)
    p[:4] = [0, 0, 1, 1]
    r[:4] = [0, 1, 0, 1]
    v = rng.integers(0, 2, n).astype(float) if binary else rng.random(n)
    return table(p, r, v)


@pytest.mark.parametrize("binary", [False, True])
def test_fairness_matches_brute_force(rng, binary):
    for _ in range(300):
        t = random_table(rng, int(rng.integers(4, 30)), binary)
        for kind in FairnessKind:
            got = empirical_fairness(t, kind)
            want = fairness_direct(t.protected.tolist(), t.relevance.tolist(), t.values.tolist(), kind.value)
            assert abs(got - want) <= 1e-12
            assert 0.0 <= got <= 1.0


def test_fairness_symmetries(rng):
    for _ in range(200):
        t = random_table(rng, 20, False)
        perm = rng.permutation(20)
        swapped = table(1 - t.protected, t.relevance, t.values)
        shuffled = table(t.protected[perm], t.relevance[perm], t.values[perm])
        for kind in FairnessKind:
            base = empirical_fairness(t, kind)
            assert empirical_fairness(swapped, kind) == base
            assert empirical_fairness(shuffled, kind) == pytest.approx(base, abs=1e-15)


def test_evaluate_rankings_record():
    rankings = [
        RankedQuery("q1", ["a", "b", "c"], [1, 0, 1], [0, 1, 1]),
        RankedQuery("q2", ["d", "e"], [0, 1], [1, 0]),
    ]
    rec = evaluate_rankings(rankings, 1)
    assert rec["precision"] == 0.5
    assert rec["ndcg"] == pytest.approx(0.5)
    # relevant: a(0, sel), c(1, not), e(0, not) -> |1/2 - 0|
    assert rec["gamma_eop"] == 0.5


def test_evaluate_rankings_strict_kind():
    rankings = [RankedQuery("q", ["a", "b"], [1, 0], [0, 0])]
    rec = evaluate_rankings(rankings, 1)
    assert math.isnan(rec["gamma_dp"])
    with pytest.raises(EmptySubgroupError):
        evaluate_rankings(rankings, 1, strict="dp")
