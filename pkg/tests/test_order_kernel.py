import math
from collections import Counter
from itertools import permutations

import numpy as np
import pytest

from brood.bge import BgeScorer, log_sum_exp
from brood.graphs import SearchSpace, TopOrder, dags_in
from brood.oracle import exact_q0_matrix, stationary_distribution
from brood.order_kernel import (
    OrderProposal,
    OrderState,
    apply_proposal,
    enumerate_proposals,
    propose_order,
    q0_step,
    sample_dag_given,
    warm_start_order,
)
from brood.tables import build_tables, restricted_order_logscore

from conftest import make_dataset, random_space


def proposal_matrix(p):
    perms = list(permutations(range(p)))
    idx = {perm: k for k, perm in enumerate(perms)}
    mat = np.zeros((len(perms), len(perms)))
    for a, perm in enumerate(perms):
        for prop, prob in enumerate_proposals(p):
            mat[a, idx[apply_proposal(perm, prop)]] += prob
    return perms, mat


def test_apply_proposal_kinds():
    perm = (0, 1, 2, 3)
    assert apply_proposal(perm, OrderProposal("adjacent", (1,))) == (0, 2, 1, 3)
    assert apply_proposal(perm, OrderProposal("swap", (0, 3))) == (3, 1, 2, 0)
    assert apply_proposal(perm, OrderProposal("relocate", (0, 2))) == (1, 2, 0, 3)
    assert apply_proposal(perm, OrderProposal("relocate", (2, 2))) == perm


def test_proposal_distribution_is_symmetric():
    for p in (2, 3, 4):
        _, mat = proposal_matrix(p)
        assert np.abs(mat - mat.T).max() <= 1e-15
        assert np.abs(mat.sum(axis=1) - 1.0).max() <= 1e-12


def test_propose_order_matches_enumeration(rng):
    p = 4
    start = TopOrder((0, 1, 2, 3))
    n = 100_000
    counts = Counter()
    for _ in range(n):
        new, _ = propose_order(start, rng)
        counts[new.perm] += 1
    _, mat = proposal_matrix(p)
    perms = list(permutations(range(p)))
    row = mat[perms.index(start.perm)]
    for k, perm in enumerate(perms):
        prob = row[k]
        if prob == 0:
            assert counts[perm] == 0
            continue
        sigma = math.sqrt(prob * (1 - prob) / n)
        assert abs(counts[perm] / n - prob) <= 3 * sigma + 1e-4


def test_propose_order_needs_two_nodes(rng):
    with pytest.raises(ValueError):
        propose_order(TopOrder((0,)), rng)


def _order_scores(t, p):
    return {
        perm: restricted_order_logscore(TopOrder(perm), t)
        for perm in permutations(range(p))
    }


def test_q0_exact_stationarity_and_detailed_balance(rng):
    p = 3
    d = make_dataset(rng, p, 40)
    sc = BgeScorer(d)
    h = random_space(rng, p, 0.7)
    t = build_tables(h, sc)
    ls = _order_scores(t, p)
    orders, P = exact_q0_matrix(ls, p)
    assert np.abs(P.sum(axis=1) - 1.0).max() <= 1e-12
    w = np.array([ls[o] for o in orders])
    target = np.exp(w - log_sum_exp(w))
    # claimed stationary distribution has negligible residual
    assert np.abs(target @ P - target).max() <= 1e-10
    pi = stationary_distribution(P)
    assert np.abs(pi - target).max() <= 1e-10
    for a in range(len(orders)):
        for b in range(len(orders)):
            assert abs(target[a] * P[a, b] - target[b] * P[b, a]) <= 1e-12


def test_higher_score_proposals_always_accepted(rng):
    p = 3
    d = make_dataset(rng, p, 40)
    sc = BgeScorer(d)
    t = build_tables(SearchSpace.complete(p), sc)
    state = OrderState.fresh(TopOrder((0, 1, 2)), t)
    # run steps; whenever the score went up the move must have been accepted
    for _ in range(300):
        before = state.log_score
        state, accepted = q0_step(state, t, rng)
        if state.log_score > before:
            assert accepted


def test_q0_incremental_cache_consistency(rng):
    for trial in range(5):
        p = int(rng.integers(3, 6))
        d = make_dataset(rng, p, 30)
        sc = BgeScorer(d)
        h = random_space(rng, p, 0.6)
        t = build_tables(h, sc)
        state = OrderState.fresh(TopOrder(tuple(range(p))), t)
        for _ in range(200):
            state, _ = q0_step(state, t, rng, debug=True)  # raises on drift


def test_sample_dag_membership_and_conditional(rng):
    p = 3
    d = make_dataset(rng, p, 30)
    sc = BgeScorer(d)
    h = random_space(rng, p, 0.8)
    t = build_tables(h, sc)
    o = TopOrder((2, 0, 1))
    admissible = {g.parents for g in dags_in(h, o)}
    logws = {
        g.parents: sum(sc.node_score(i, g.parents[i]) for i in range(p))
        for g in dags_in(h, o)
    }
    z = log_sum_exp(list(logws.values()))
    exact = {k: math.exp(v - z) for k, v in logws.items()}
    n = 20_000
    counts = Counter()
    for _ in range(n):
        g = sample_dag_given(o, t, rng)
        assert g.parents in admissible
        counts[g.parents] += 1
    tv = 0.5 * sum(abs(counts.get(k, 0) / n - v) for k, v in exact.items())
    assert tv <= 0.03


def test_sample_dag_empty_space(rng):
    d = make_dataset(rng, 3, 20)
    sc = BgeScorer(d)
    t = build_tables(SearchSpace.empty(3), sc)
    g = sample_dag_given(TopOrder((0, 1, 2)), t, rng)
    assert g.parents == (0, 0, 0)


def test_sample_dag_plus_one_adds_at_most_one_outside(rng):
    d = make_dataset(rng, 4, 30)
    sc = BgeScorer(d)
    h = SearchSpace.from_edges(4, [(0, 1)])
    t = build_tables(h, sc)
    o = TopOrder((0, 1, 2, 3))
    for _ in range(300):
        g = sample_dag_given(o, t, rng, plus_one=True)
        for i in range(4):
            outside = g.parents[i] & ~h.allowed[i]
            assert outside.bit_count() <= 1


def test_warm_start_order_is_deterministic_and_degree_sorted():
    h = SearchSpace.from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2)])
    o = warm_start_order(h)
    assert o == warm_start_order(h)
    deg = [4, 2, 2, 1]
    got = [deg[i] for i in o.perm]
    assert got == sorted(got, reverse=True)
