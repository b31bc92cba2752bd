"""Birth-death moves over search spaces and the mixture-kernel chain driver.

A chain state is a (search space, topological order) pair carried by the
score tables and the cached order state. The space-changing kernel proposes
adding or removing one allowed edge with probability proportional to its
birth or death rate and accepts with the ratio of waiting times; the
order-moving kernel is plain MH at the current space. Rates are node-local:
the decomposable score cancels everywhere except at the target node, whose
factor is read straight off the banned and plus-banned tables, so proposing
never rebuilds anything and only an accepted move re-tables a single node.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bge import NEG_INF, log_sum_exp
from .graphs import Dag, Edge, SearchSpace, TopOrder
from .order_kernel import (
    OrderState,
    make_order_state,
    q0_step,
    sample_dag_given,
    warm_start_order,
)
from .tables import TableSet, banned_code, build_tables, contract_tables, expand_tables

# cap on log rate ratios so rates stay finite even in pathological states
_MAX_LOG_RATE = 700.0


@dataclass(frozen=True)
class BroodConfig:
    """Knobs of the mixture kernel and the chain budget."""

    ell: float = 0.1
    c_star: float = 1.0
    cap: Optional[int] = None
    steps: Optional[int] = None
    warmup: Optional[int] = None
    thin_target: int = 2500
    seed: int = 0
    plus_one: bool = False
    sample_dags: bool = True

    def __post_init__(self):
        if not 0.0 <= self.ell <= 1.0:
            raise ValueError("ell must lie in [0, 1]")
        if not 0.0 < self.c_star <= 1.0:
            raise ValueError("c_star must lie in (0, 1]")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be positive")
        if self.warmup is not None and self.steps is not None and self.steps <= 0:
            raise ValueError("steps must exceed 0")


def default_steps(p: int) -> int:
    return min(25000, math.ceil(p * p * math.log(p))) if p > 1 else 1


@dataclass(frozen=True)
class RatesSnapshot:
    births: dict[Edge, float]
    deaths: dict[Edge, float]
    beta: float
    delta: float
    waiting: float

    @property
    def stuck(self) -> bool:
        return self.beta + self.delta == 0.0


def birth_rate(h: SearchSpace, o: TopOrder, e: Edge, t: TableSet) -> float:
    """Half the ratio of the target node's restricted sums with/without e.

    The expanded sum is the current banned aggregate joined with the
    candidate's plus-banned entry; an edge whose source does not precede its
    destination enlarges the space without admitting new graphs, so the ratio
    is 1 and the rate 1/2. A destination at the in-degree cap gets rate 0.
    """
    if h.has_edge(e):
        raise ValueError("birth rate of an existing edge")
    if t.cap is not None and h.allowed[e.dst].bit_count() >= t.cap:
        return 0.0
    if o.pos[e.src] > o.pos[e.dst]:
        return 0.5
    nt = t.nodes[e.dst]
    code = banned_code(nt.node, o, nt.cands)
    base = float(nt.banned[code])
    plus = float(nt.plus_banned[code, nt.plus_slot(e.src)])
    if base == NEG_INF:
        return 0.5 if plus == NEG_INF else math.exp(_MAX_LOG_RATE)
    expanded = np.logaddexp(base, plus)
    return 0.5 * math.exp(min(expanded - base, _MAX_LOG_RATE))


def death_rate(h: SearchSpace, o: TopOrder, e: Edge, t: TableSet, c_star: float) -> float:
    """2 c* times the ratio of restricted sums without/with e.

    Removing an edge whose source is already banned by the order leaves the
    admissible set unchanged, giving rate 2 c*.
    """
    if not h.has_edge(e):
        raise ValueError("death rate of a missing edge")
    nt = t.nodes[e.dst]
    code = banned_code(nt.node, o, nt.cands)
    bit = 1 << nt.cand_slot(e.src)
    base = float(nt.banned[code])
    contracted = float(nt.banned[code | bit])
    if base == NEG_INF:
        return 2.0 * c_star if contracted == NEG_INF else math.exp(_MAX_LOG_RATE)
    return 2.0 * c_star * math.exp(min(contracted - base, _MAX_LOG_RATE))


def rates_snapshot(h: SearchSpace, o: TopOrder, t: TableSet, cfg: BroodConfig) -> RatesSnapshot:
    births: dict[Edge, float] = {}
    deaths: dict[Edge, float] = {}
    for dst in range(h.p):
        allowed = h.allowed[dst]
        for src in range(h.p):
            if src == dst:
                continue
            e = Edge(src, dst)
            if (allowed >> src) & 1:
                deaths[e] = death_rate(h, o, e, t, cfg.c_star)
            else:
                rate = birth_rate(h, o, e, t)
                if rate > 0.0:
                    births[e] = rate
    beta = float(sum(births.values()))
    delta = float(sum(deaths.values()))
    waiting = math.inf if beta + delta == 0.0 else 1.0 / (beta + delta)
    return RatesSnapshot(births, deaths, beta, delta, waiting)


@dataclass
class ChainState:
    tables: TableSet
    order: OrderState

    @property
    def space(self) -> SearchSpace:
        return self.tables.space


def _pick_edge(rates: dict[Edge, float], total: float, rng: np.random.Generator) -> Edge:
    u = rng.random() * total
    acc = 0.0
    last = None
    for e, r in rates.items():
        acc += r
        last = e
        if u < acc:
            return e
    return last  # guards against roundoff at the right tail


def q1_step(
    state: ChainState,
    cfg: BroodConfig,
    scorer,
    rng: np.random.Generator,
) -> tuple[ChainState, bool, str]:
    """One birth-death proposal; returns (state', accepted, 'birth'/'death').

    Rejection discards the trial tables; the retained TableSet is the very
    object from before the step, so restoration is exact by construction.
    """
    snap = rates_snapshot(state.space, state.order.order, state.tables, cfg)
    if snap.stuck:
        return state, False, "none"
    u = rng.random()
    if u < snap.waiting * snap.beta:
        kind = "birth"
        edge = _pick_edge(snap.births, snap.beta, rng)
        trial = expand_tables(state.tables, edge, scorer)
    else:
        kind = "death"
        edge = _pick_edge(snap.deaths, snap.delta, rng)
        trial = contract_tables(state.tables, edge)
    snap_new = rates_snapshot(trial.space, state.order.order, trial, cfg)
    if snap_new.stuck:
        accept_prob = 1.0
    else:
        accept_prob = min(1.0, snap_new.waiting / snap.waiting)
    if rng.random() < accept_prob:
        new_order = state.order.refresh_node(trial, edge.dst)
        return ChainState(trial, new_order), True, kind
    return state, False, kind


def brood_step(
    state: ChainState,
    cfg: BroodConfig,
    scorer,
    rng: np.random.Generator,
) -> tuple[ChainState, bool, str]:
    """Mixture step: order move with probability 1 - ell, space move otherwise."""
    if rng.random() < cfg.ell:
        return q1_step(state, cfg, scorer, rng)
    new_order, accepted = q0_step(state.order, state.tables, rng)
    return ChainState(state.tables, new_order), accepted, "q0"


@dataclass
class ChainSample:
    step: int
    space: SearchSpace
    order: TopOrder
    dag: Optional[Dag]
    kernel: str
    accepted: bool


@dataclass
class ChainTrace:
    samples: list[ChainSample]
    summary: dict = field(default_factory=dict)


def run_chain(
    cfg: BroodConfig,
    scorer,
    h0: SearchSpace,
    rng: Optional[np.random.Generator] = None,
) -> ChainTrace:
    """Run one chain from the given initial space.

    Kept samples are evenly spaced over the post-warmup steps, at most
    cfg.thin_target of them; DAGs are drawn only for kept samples.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    p = h0.p
    cap = cfg.cap if cfg.cap is not None else h0.cap
    max_indeg = max((mask.bit_count() for mask in h0.allowed), default=0)
    if cap is not None and cap < max_indeg:
        raise ValueError(
            f"cap {cap} is below the initial space's max in-degree {max_indeg}; "
            "raise --cap or shrink the initial space"
        )
    steps = cfg.steps if cfg.steps is not None else default_steps(p)
    warmup = cfg.warmup if cfg.warmup is not None else steps // 10
    t0 = time.perf_counter()
    tables = build_tables(h0, scorer, cap)
    order = make_order_state(warm_start_order(h0), tables)
    state = ChainState(tables, order)
    n_keep = min(cfg.thin_target, steps)
    keep = set(np.unique(np.linspace(0, steps - 1, n_keep).round().astype(int)).tolist())
    counts = {
        "q0_steps": 0, "q0_accepts": 0,
        "q1_steps": 0, "q1_accepts": 0,
        "births": 0, "deaths": 0,
    }
    samples: list[ChainSample] = []
    for t in range(warmup + steps):
        state, accepted, kind = brood_step(state, cfg, scorer, rng)
        if kind == "q0":
            counts["q0_steps"] += 1
            counts["q0_accepts"] += accepted
        else:
            counts["q1_steps"] += 1
            counts["q1_accepts"] += accepted
            if accepted:
                counts["births" if kind == "birth" else "deaths"] += 1
        idx = t - warmup
        if idx >= 0 and idx in keep:
            dag = sample_dag_given(state.order.order, state.tables, rng, cfg.plus_one) \
                if cfg.sample_dags else None
            samples.append(ChainSample(
                step=idx,
                space=state.space,
                order=state.order.order,
                dag=dag,
                kernel=kind if kind == "q0" else "q1",
                accepted=accepted,
            ))
    runtime = time.perf_counter() - t0
    summary = dict(counts)
    summary.update({
        "steps": steps,
        "warmup": warmup,
        "kept": len(samples),
        "runtime_seconds": runtime,
        "q0_accept_rate": counts["q0_accepts"] / counts["q0_steps"] if counts["q0_steps"] else 0.0,
        "q1_accept_rate": counts["q1_accepts"] / counts["q1_steps"] if counts["q1_steps"] else 0.0,
        "final_edges": state.space.n_edges(),
    })
    return ChainTrace(samples=samples, summary=summary)


def run_chains(
    cfg: BroodConfig,
    scorer_factory,
    h0: SearchSpace,
    n_chains: int,
) -> list[ChainTrace]:
    """Independent chains with rng streams split off one master seed."""
    streams = np.random.SeedSequence(cfg.seed).spawn(n_chains)
    return [
        run_chain(cfg, scorer_factory(), h0, rng=np.random.default_rng(s))
        for s in streams
    ]


# ---------------------------------------------------------------------------
# closed-form stationary reference for small p


def node_logsum_tables(p: int, scorer) -> list[np.ndarray]:
    """Per node, the subset-sum transform of all-parent-set scores.

    f[i][mask] = LSE of node i's score over parent sets that are submasks of
    ``mask`` (mask over the full node set, bit i forced clear). This makes
    the restricted sum of any (space, order) pair a p-term lookup.
    """
    full = (1 << p) - 1
    out = []
    for i in range(p):
        others = full ^ (1 << i)
        scores = np.full(1 << p, NEG_INF)
        sub = others
        while True:
            scores[sub] = scorer.node_score(i, sub)
            if sub == 0:
                break
            sub = (sub - 1) & others
        f = scores.copy()
        for k in range(p):
            bit = 1 << k
            idx = np.arange(1 << p)
            has = (idx & bit) != 0
            f[has] = np.logaddexp(f[has], f[idx[has] ^ bit])
        out.append(f)
    return out


def restricted_logsum(h_masks: tuple[int, ...], o: TopOrder, f: list[np.ndarray]) -> float:
    """log of the summed scores of DAGs inside the space and order."""
    total = 0.0
    for i in range(len(h_masks)):
        total += float(f[i][h_masks[i] & o.predecessor_mask(i)])
    return total


def enumerate_spaces(p: int, cap: Optional[int] = None):
    """All search spaces as tuples of allowed masks, respecting the cap."""
    def node_masks(i):
        others = ((1 << p) - 1) ^ (1 << i)
        for sub in _all_submasks(others):
            if cap is None or sub.bit_count() <= cap:
                yield sub

    def rec(i, acc):
        if i == p:
            yield tuple(acc)
            return
        for mask in node_masks(i):
            acc.append(mask)
            yield from rec(i + 1, acc)
            acc.pop()

    yield from rec(0, [])


def _all_submasks(mask: int):
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def stationary_reference(cfg: BroodConfig, scorer, p: int) -> dict[str, dict[tuple[int, ...], float]]:
    """Closed-form space-marginal mass for every search space at small p.

    Two readings of the per-order space mass are returned: 'unnormalized'
    uses the raw restricted sum; 'conditional' divides each restricted sum by
    the order's full-space sum before adding over orders. Both apply the
    (2 c*)^(-|E|) edge penalty and are normalized over spaces.
    """
    if p > 4:
        raise ValueError("stationary reference enumeration limited to p <= 4")
    from itertools import permutations

    f = node_logsum_tables(p, scorer)
    orders = [TopOrder(perm) for perm in permutations(range(p))]
    full_space = tuple((((1 << p) - 1) ^ (1 << i)) for i in range(p))
    full_by_order = {o.perm: restricted_logsum(full_space, o, f) for o in orders}
    log2c = math.log(2.0 * cfg.c_star)
    raw: dict[tuple[int, ...], float] = {}
    cond: dict[tuple[int, ...], float] = {}
    for h in enumerate_spaces(p, cfg.cap):
        n_edges = sum(mask.bit_count() for mask in h)
        terms_raw = []
        terms_cond = []
        for o in orders:
            ls = restricted_logsum(h, o, f)
            terms_raw.append(ls)
            terms_cond.append(ls - full_by_order[o.perm])
        raw[h] = -n_edges * log2c + log_sum_exp(terms_raw)
        cond[h] = -n_edges * log2c + log_sum_exp(terms_cond)
    return {
        "unnormalized": _normalize_log(raw),
        "conditional": _normalize_log(cond),
    }


def _normalize_log(logmass: dict) -> dict:
    total = log_sum_exp(list(logmass.values()))
    return {k: math.exp(v - total) for k, v in logmass.items()}
