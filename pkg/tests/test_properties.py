"""Property-based invariants across modules."""

import math
from dataclasses import replace

from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import build_dataset, build_registry
from policytrace.clauses import ClauseId, Scheme, normalize
from policytrace.corpus import Verdict
from policytrace.prtgen import AugmentedDataset, PRTRecord, count_words, prt_stats
from policytrace.select import select_random
from policytrace.significance import bonferroni, cohens_d, holm, pareto_frontier
from policytrace.significance import CostAccuracyPoint

REGISTRY = build_registry()


@given(st.lists(st.integers(min_value=1, max_value=5), min_size=0, max_size=8))
def test_normalize_idempotent_on_canonicals(numbers):
    raw = ", ".join(f"Article {n}" for n in numbers)
    resolved, unknowns = normalize(raw, REGISTRY)
    assert unknowns == []
    # feeding the canonical forms back yields the same resolution
    again, _ = normalize(", ".join(c.canonical for c in resolved), REGISTRY)
    assert again == resolved
    # resolution is set-deduplicating and order-preserving
    assert [c.canonical for c in resolved] == [
        f"Article {n}" for n in dict.fromkeys(numbers)
    ]


@given(
    st.sets(st.integers(min_value=1, max_value=10), min_size=1, max_size=6),
    st.sets(st.integers(min_value=1, max_value=10), max_size=6),
)
def test_exact_match_implies_full_recall(gold_nums, cited_nums):
    gold = {ClauseId(f"Article {n}", Scheme.ARTICLE) for n in gold_nums}
    cited = {ClauseId(f"Article {n}", Scheme.ARTICLE) for n in cited_nums}
    recall = len(cited & gold) / len(gold)
    exact = cited == gold
    if exact:
        assert recall == 1.0
    assert 0.0 <= recall <= 1.0


@given(st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=12))
@settings(max_examples=200)
def test_holm_dominated_by_bonferroni(ps):
    h = holm(ps)
    bf = bonferroni(ps)
    assert all(x <= y + 1e-12 for x, y in zip(h, bf))
    assert all(0.0 <= x <= 1.0 for x in h)
    # corrected values never fall below the raw p-values
    assert all(x >= p - 1e-12 for x, p in zip(h, ps))


@given(
    st.lists(
        st.tuples(
            st.integers(min_value=0, max_value=10_000),
            st.integers(min_value=0, max_value=10_000),
        ),
        min_size=1,
        max_size=40,
    ),
    st.integers(min_value=1, max_value=39),
)
@settings(max_examples=100)
def test_cost_linear_over_partitions(token_pairs, cut):
    from policytrace.assess import InstanceResult, Turn
    from policytrace.gateway import mock_provider
    from policytrace.significance import run_cost

    handle = mock_provider({}, price_in_usd_per_1m=0.40, price_out_usd_per_1m=1.75)

    def results(pairs):
        return [
            InstanceResult(
                case_id=f"c{i}",
                strategy="base",
                turns=[
                    Turn(
                        template_id="base",
                        prompt_hash="h",
                        response_text="x",
                        prompt_tokens=p,
                        completion_tokens=q,
                    )
                ],
                parsed_verdict=None,
                correct=None,
            )
            for i, (p, q) in enumerate(pairs)
        ]

    cut = min(cut, len(token_pairs))
    whole = run_cost(results(token_pairs), handle)
    left = run_cost(results(token_pairs[:cut]), handle)
    right = run_cost(results(token_pairs[cut:]), handle)
    assert math.isclose(whole, left + right, rel_tol=0, abs_tol=1e-9)


def _toy_pool(n):
    dataset = build_dataset(REGISTRY)
    train = dataset.train
    triples = []
    for i in range(n):
        case = replace(train[i % len(train)], case_id=f"p{i:02d}")
        prt = PRTRecord(
            case_id=case.case_id,
            expert_model="m",
            prt_text=f"1. Point {i}.\n2. Therefore, the case is {case.gold_verdict.value}.",
            echoed_verdict=case.gold_verdict,
            word_count=8,
            sentence_count=2,
            prompt_hash="h",
            created_at="t",
        )
        triples.append((case, case.gold_verdict, prt))
    return AugmentedDataset(policy_id="synthpol", triples=triples)


@given(
    st.integers(min_value=2, max_value=12),
    st.integers(min_value=0, max_value=2**32),
)
@settings(max_examples=100)
def test_select_random_is_content_function(n, seed):
    pool_a = _toy_pool(n)
    pool_b = _toy_pool(n)
    k = max(1, n // 2)
    ids_a = [c.case_id for c, _, _ in select_random(pool_a, k, seed)]
    ids_b = [c.case_id for c, _, _ in select_random(pool_b, k, seed)]
    assert ids_a == ids_b
    assert len(set(ids_a)) == k


@given(
    st.lists(
        st.tuples(
            st.floats(min_value=0.0, max_value=100.0),
            st.floats(min_value=0.0, max_value=100.0),
        ),
        min_size=1,
        max_size=30,
    )
)
@settings(max_examples=200)
def test_pareto_frontier_matches_quadratic_oracle(raw):
    points = [CostAccuracyPoint(f"p{i}", c, a) for i, (c, a) in enumerate(raw)]

    def dominated(p):
        return any(
            q.cost <= p.cost
            and q.accuracy >= p.accuracy
            and (q.cost < p.cost or q.accuracy > p.accuracy)
            for q in points
        )

    oracle = [p.label for p in points if not dominated(p)]
    assert [p.label for p in pareto_frontier(points)] == oracle
    assert oracle  # a finite point set always has a non-dominated point


@given(st.lists(st.integers(min_value=1, max_value=500), min_size=1, max_size=30))
def test_prt_stats_matches_manual_recount(word_counts):
    records = [
        PRTRecord(
            case_id=f"c{i}",
            expert_model="m",
            prt_text=" ".join(["w"] * wc),
            echoed_verdict=Verdict.COMPLIANT,
            word_count=wc,
            sentence_count=1,
            prompt_hash="h",
            created_at="t",
        )
        for i, wc in enumerate(word_counts)
    ]
    stats = prt_stats(records)
    n = len(word_counts)
    mu = sum(word_counts) / n
    sigma = math.sqrt(sum((w - mu) ** 2 for w in word_counts) / n)
    assert math.isclose(stats.mu_word, mu, abs_tol=1e-12)
    assert math.isclose(stats.sigma_word, sigma, abs_tol=1e-9)
    # the stored word counts agree with recounting the trace text
    assert all(count_words(r.prt_text) == r.word_count for r in records)


@given(
    st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=20),
    st.floats(min_value=0.1, max_value=10.0),
    st.floats(min_value=-5.0, max_value=5.0),
)
@settings(max_examples=100)
def test_cohens_d_shift_invariance(values, scale, shift):
    a = [v * scale for v in values]
    b = [v * scale + shift for v in values]
    try:
        d_raw = cohens_d(a, b)
        d_shifted = cohens_d([x + 3.0 for x in a], [x + 3.0 for x in b])
    except Exception:
        return  # zero pooled variance draws are out of scope
    assert math.isclose(d_raw, d_shifted, rel_tol=1e-9, abs_tol=1e-9)
