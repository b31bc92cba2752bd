import math

import numpy as np
import pytest

from brood.bge import BgeScorer, ConstantScorer
from brood.graphs import Edge, SearchSpace, TopOrder
from brood.oracle import exact_mixture_kernel
from brood.order_kernel import make_order_state, warm_start_order
from brood.sampler import (
    BroodConfig,
    ChainState,
    birth_rate,
    brood_step,
    death_rate,
    default_steps,
    node_logsum_tables,
    q1_step,
    rates_snapshot,
    restricted_logsum,
    run_chain,
    stationary_reference,
)
from brood.tables import build_tables

from conftest import make_dataset, random_order, random_space


def test_config_validation():
    with pytest.raises(ValueError):
        BroodConfig(ell=1.5)
    with pytest.raises(ValueError):
        BroodConfig(c_star=0.0)
    with pytest.raises(ValueError):
        BroodConfig(steps=0)


def test_default_steps():
    assert default_steps(20) == math.ceil(400 * math.log(20))
    assert default_steps(200) == 25000


def test_birth_rate_uniform_scores():
    sc = ConstantScorer(2, 0.0)
    h = SearchSpace.empty(2)
    t = build_tables(h, sc)
    o = TopOrder((0, 1))
    # restricted sums: 1 graph without the edge, 2 with it -> ratio 2
    assert math.isclose(birth_rate(h, o, Edge(0, 1), t), 1.0, abs_tol=1e-12)
    # source after destination: space grows but admits nothing new
    assert birth_rate(h, o, Edge(1, 0), t) == 0.5


def test_birth_rate_zero_at_cap():
    sc = ConstantScorer(3, 0.0)
    h = SearchSpace.from_edges(3, [(0, 2)], cap=1)
    t = build_tables(h, sc, cap=1)
    assert birth_rate(h, TopOrder((0, 1, 2)), Edge(1, 2), t) == 0.0


def test_death_rate_uniform_scores():
    sc = ConstantScorer(2, 0.0)
    h = SearchSpace.from_edges(2, [(0, 1)])
    t = build_tables(h, sc)
    o = TopOrder((0, 1))
    # removing the only order-compatible edge halves the restricted sum
    assert math.isclose(death_rate(h, o, Edge(0, 1), t, 1.0), 1.0, abs_tol=1e-12)
    # an edge banned by the order leaves the admissible set unchanged
    h2 = SearchSpace.from_edges(2, [(1, 0)])
    t2 = build_tables(h2, sc)
    assert math.isclose(death_rate(h2, o, Edge(1, 0), t2, 1.0), 2.0, abs_tol=1e-12)
    # c* -> 0 kills all death rates
    assert death_rate(h2, o, Edge(1, 0), t2, 1e-9) <= 2e-9


def test_rates_node_local_vs_enumeration(rng):
    p = 3
    d = make_dataset(rng, p, 40)
    sc = BgeScorer(d)
    f = node_logsum_tables(p, sc)
    for _ in range(10):
        h = random_space(rng, p, 0.5)
        t = build_tables(h, sc)
        o = random_order(rng, p)
        masks = tuple(h.allowed)
        base = restricted_logsum(masks, o, f)
        for dst in range(p):
            for src in range(p):
                if src == dst:
                    continue
                e = Edge(src, dst)
                plus = list(masks)
                if h.has_edge(e):
                    plus[dst] &= ~(1 << src)
                    want = 2.0 * math.exp(restricted_logsum(tuple(plus), o, f) - base)
                    got = death_rate(h, o, e, t, 1.0)
                else:
                    plus[dst] |= 1 << src
                    want = 0.5 * math.exp(restricted_logsum(tuple(plus), o, f) - base)
                    got = birth_rate(h, o, e, t)
                assert abs(got - want) <= 1e-9 * max(1.0, want)


def test_birth_death_reciprocal_consistency(rng):
    p = 4
    d = make_dataset(rng, p, 30)
    sc = BgeScorer(d)
    for c_star in (1.0, 0.35):
        for _ in range(10):
            h = random_space(rng, p, 0.4)
            t = build_tables(h, sc)
            o = random_order(rng, p)
            for dst in range(p):
                for src in range(p):
                    e = Edge(src, dst)
                    if src == dst or h.has_edge(e):
                        continue
                    b = birth_rate(h, o, e, t)
                    from brood.tables import expand_tables

                    t_plus = expand_tables(t, e, sc)
                    dth = death_rate(t_plus.space, o, e, t_plus, c_star)
                    assert abs(b * dth - c_star) <= 1e-12 * max(1.0, c_star)


def test_rates_snapshot_shapes():
    sc = ConstantScorer(3, 0.0)
    empty = SearchSpace.empty(3)
    t = build_tables(empty, sc)
    snap = rates_snapshot(empty, TopOrder((0, 1, 2)), t, BroodConfig())
    assert not snap.deaths
    assert snap.beta > 0
    assert math.isclose(snap.waiting, 1.0 / (snap.beta + snap.delta))

    full = SearchSpace.complete(3, cap=2)
    t2 = build_tables(full, sc, cap=2)
    snap2 = rates_snapshot(full, TopOrder((0, 1, 2)), t2, BroodConfig(cap=2))
    assert not snap2.births
    assert snap2.delta > 0


def test_q1_reject_preserves_tables_identically(rng):
    p = 4
    d = make_dataset(rng, p, 25)
    sc = BgeScorer(d)
    h = random_space(rng, p, 0.5, cap=3)
    t = build_tables(h, sc, cap=3)
    state = ChainState(t, make_order_state(warm_start_order(h), t))
    cfg = BroodConfig(cap=3)
    saw_reject = False
    for _ in range(200):
        new_state, accepted, kind = q1_step(state, cfg, sc, rng)
        if not accepted:
            saw_reject = True
            assert new_state.tables is state.tables
            assert new_state.order is state.order
        state = new_state
    assert saw_reject


def test_q1_exact_eight_state_stationarity():
    # uniform scores at p=2: the space kernel alone leaves a per-order-slice
    # measure with a squared restricted sum and a (4 c*)^{-|E|} penalty
    # invariant; check the residual on the exact matrix
    p = 2
    cfg = BroodConfig(ell=1.0, c_star=1.0)
    kern = exact_mixture_kernel(cfg, ConstantScorer(p, 0.0), p)
    n_o = len(kern.orders)
    pi = np.zeros(len(kern.spaces) * n_o)
    for b in range(n_o):
        slice_mass = np.array([
            0.25 ** sum(m.bit_count() for m in h) * math.exp(2 * kern.logsums[a, b])
            for a, h in enumerate(kern.spaces)
        ])
        slice_mass /= slice_mass.sum()
        for a in range(len(kern.spaces)):
            pi[a * n_o + b] = slice_mass[a] / n_o
    assert np.abs(pi @ kern.matrix - pi).max() <= 1e-10


def test_brood_step_ell_extremes(rng):
    p = 3
    d = make_dataset(rng, p, 30)
    sc = BgeScorer(d)
    h = random_space(rng, p, 0.5, cap=2)
    t = build_tables(h, sc, cap=2)
    state = ChainState(t, make_order_state(warm_start_order(h), t))
    for _ in range(100):
        state, _, kind = brood_step(state, BroodConfig(ell=0.0, cap=2), sc, rng)
        assert kind == "q0"
        assert state.space == h
    order_before = state.order.order
    for _ in range(100):
        state, _, kind = brood_step(state, BroodConfig(ell=1.0, cap=2), sc, rng)
        assert kind in ("birth", "death", "none")
        assert state.order.order == order_before


def test_run_chain_deterministic(rng):
    p = 4
    d = make_dataset(rng, p, 30)
    h = random_space(rng, p, 0.5, cap=2)
    cfg = BroodConfig(steps=150, warmup=20, cap=3, seed=9)
    t1 = run_chain(cfg, BgeScorer(d), h)
    t2 = run_chain(cfg, BgeScorer(d), h)
    assert len(t1.samples) == len(t2.samples) == 150
    for a, b in zip(t1.samples, t2.samples):
        assert a.space == b.space
        assert a.order == b.order
        assert a.dag == b.dag


def test_run_chain_rejects_cap_below_initial(rng):
    d = make_dataset(rng, 4, 20)
    h = SearchSpace.from_edges(4, [(0, 1), (2, 1), (3, 1)])
    with pytest.raises(ValueError):
        run_chain(BroodConfig(cap=2, steps=10), BgeScorer(d), h)


def test_run_chains_split_streams(rng):
    p = 3
    d = make_dataset(rng, p, 25)
    h = random_space(rng, p, 0.5, cap=2)
    from brood.sampler import run_chains

    cfg = BroodConfig(steps=60, warmup=10, cap=2, seed=5)
    traces = run_chains(cfg, lambda: BgeScorer(d), h, n_chains=2)
    assert len(traces) == 2
    # distinct streams: the two chains should not be step-for-step identical
    a = [s.order.perm for s in traces[0].samples]
    b = [s.order.perm for s in traces[1].samples]
    assert a != b


def test_stationary_reference_uniform_scores():
    cfg = BroodConfig(c_star=1.0)
    ref = stationary_reference(cfg, ConstantScorer(2, 0.0), 2)
    # per-order masses over the four spaces are (1, 1, 1/2, 1/2); summed over
    # both orders and normalized: (1/3, 1/4, 1/4, 1/6)
    raw = ref["unnormalized"]
    empty = (0, 0)
    fwd = (0, 1)   # allowed parent masks: node 1 may take parent 0
    bwd = (2, 0)
    both = (2, 1)
    assert math.isclose(raw[empty], 1 / 3, abs_tol=1e-12)
    assert math.isclose(raw[fwd], 1 / 4, abs_tol=1e-12)
    assert math.isclose(raw[bwd], 1 / 4, abs_tol=1e-12)
    assert math.isclose(raw[both], 1 / 6, abs_tol=1e-12)
    # both readings coincide for constant scores
    for k, v in ref["conditional"].items():
        assert math.isclose(v, raw[k], abs_tol=1e-12)


def test_stationary_reference_cstar_rescaling(rng):
    p = 2
    d = make_dataset(rng, p, 20)
    sc = BgeScorer(d)
    ref1 = stationary_reference(BroodConfig(c_star=1.0), sc, p)["unnormalized"]
    ref2 = stationary_reference(BroodConfig(c_star=0.5), sc, p)["unnormalized"]
    base = (0, 0)
    for h in ref1:
        edges = sum(m.bit_count() for m in h)
        ratio = (ref2[h] / ref1[h]) / (ref2[base] / ref1[base])
        assert math.isclose(ratio, 2.0 ** edges, rel_tol=1e-9)


def test_per_order_reference_masses_uniform():
    # the raw per-order weights behind the reference, checked by hand
    sc = ConstantScorer(2, 0.0)
    f = node_logsum_tables(2, sc)
    o = TopOrder((0, 1))
    get = lambda h: math.exp(restricted_logsum(h, o, f)) * 0.5 ** sum(
        m.bit_count() for m in h
    )
    assert math.isclose(get((0, 0)), 1.0)
    assert math.isclose(get((0, 1)), 1.0)
    assert math.isclose(get((2, 0)), 0.5)
    assert math.isclose(get((2, 1)), 0.5)


def test_q1_noop_when_no_move_is_admissible(rng):
    # cap 0 on an empty space blocks every birth and there is nothing to kill
    sc = ConstantScorer(2, 0.0)
    h = SearchSpace.empty(2, cap=0)
    t = build_tables(h, sc, cap=0)
    state = ChainState(t, make_order_state(TopOrder((0, 1)), t))
    cfg = BroodConfig(ell=1.0, cap=0)
    snap = rates_snapshot(h, state.order.order, t, cfg)
    assert snap.stuck and snap.waiting == math.inf
    new_state, accepted, kind = q1_step(state, cfg, sc, rng)
    assert kind == "none" and not accepted
    assert new_state.tables is state.tables


def test_chain_cannot_get_stuck(rng):
    p = 3
    d = make_dataset(rng, p, 30)
    sc = BgeScorer(d)
    h = random_space(rng, p, 0.5, cap=2)
    t = build_tables(h, sc, cap=2)
    o = random_order(rng, p)
    cfg = BroodConfig(cap=2)
    snap = rates_snapshot(h, o, t, cfg)
    assert snap.beta + snap.delta > 0
    # every proposable move has strictly positive acceptance
    from brood.tables import contract_tables, expand_tables

    for e in snap.births:
        t2 = expand_tables(t, e, sc)
        s2 = rates_snapshot(t2.space, o, t2, cfg)
        assert min(1.0, s2.waiting / snap.waiting) > 0
    for e in snap.deaths:
        t2 = contract_tables(t, e)
        s2 = rates_snapshot(t2.space, o, t2, cfg)
        assert min(1.0, s2.waiting / snap.waiting) > 0
