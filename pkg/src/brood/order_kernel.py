"""Metropolis-Hastings over topological orders at a fixed search space.

Proposals mix adjacent swaps (0.5), arbitrary position swaps (0.3) and
single-node relocations (0.2). Every component is symmetric, so acceptance
is a pure score ratio. The per-node banned codes are cached and only the
nodes whose codes actually changed are looked up again after a move.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graphs import Dag, SearchSpace, TopOrder, iter_bits, submasks
from .tables import OpCounter, TableSet, banned_code, restricted_order_logscore

PROPOSAL_MIX = (("adjacent", 0.5), ("swap", 0.3), ("relocate", 0.2))


@dataclass(frozen=True)
class OrderProposal:
    kind: str
    params: tuple[int, ...]


def apply_proposal(perm: tuple[int, ...], prop: OrderProposal) -> tuple[int, ...]:
    lst = list(perm)
    if prop.kind == "adjacent":
        k = prop.params[0]
        lst[k], lst[k + 1] = lst[k + 1], lst[k]
    elif prop.kind == "swap":
        a, b = prop.params
        lst[a], lst[b] = lst[b], lst[a]
    elif prop.kind == "relocate":
        a, b = prop.params
        lst.insert(b, lst.pop(a))
    else:
        raise ValueError(f"unknown proposal kind {prop.kind!r}")
    return tuple(lst)


def enumerate_proposals(p: int):
    """Exhaustive (proposal, probability) pairs of the move distribution.

    Used by the exact-kernel oracle; must stay in lockstep with
    propose_order.
    """
    out = []
    w_adj, w_swap, w_rel = (w for _, w in PROPOSAL_MIX)
    for k in range(p - 1):
        out.append((OrderProposal("adjacent", (k,)), w_adj / (p - 1)))
    n_pairs = p * (p - 1) // 2
    for a in range(p):
        for b in range(a + 1, p):
            out.append((OrderProposal("swap", (a, b)), w_swap / n_pairs))
    for a in range(p):
        for b in range(p):
            out.append((OrderProposal("relocate", (a, b)), w_rel / (p * p)))
    return out


def propose_order(o: TopOrder, rng: np.random.Generator) -> tuple[TopOrder, OrderProposal]:
    p = o.p
    if p < 2:
        raise ValueError("need p >= 2 to propose order moves")
    u = rng.random()
    if u < PROPOSAL_MIX[0][1]:
        prop = OrderProposal("adjacent", (int(rng.integers(p - 1)),))
    elif u < PROPOSAL_MIX[0][1] + PROPOSAL_MIX[1][1]:
        a, b = rng.choice(p, size=2, replace=False)
        prop = OrderProposal("swap", (int(min(a, b)), int(max(a, b))))
    else:
        prop = OrderProposal("relocate", (int(rng.integers(p)), int(rng.integers(p))))
    return TopOrder(apply_proposal(o.perm, prop)), prop


@dataclass(frozen=True)
class OrderState:
    """Order plus cached banned codes and per-node score terms."""

    order: TopOrder
    codes: np.ndarray  # banned code per node
    terms: np.ndarray  # banned[code] per node

    @property
    def log_score(self) -> float:
        return float(self.terms.sum())

    @classmethod
    def fresh(cls, o: TopOrder, t: TableSet) -> "OrderState":
        codes = np.array([banned_code(nt.node, o, nt.cands) for nt in t.nodes])
        terms = np.array([t.nodes[i].banned[codes[i]] for i in range(len(t.nodes))])
        return cls(order=o, codes=codes, terms=terms)

    def refresh_node(self, t: TableSet, node: int) -> "OrderState":
        """Revalidate one node's cache after its tables changed."""
        nt = t.nodes[node]
        code = banned_code(node, self.order, nt.cands)
        codes = self.codes.copy()
        terms = self.terms.copy()
        codes[node] = code
        terms[node] = nt.banned[code]
        return OrderState(self.order, codes, terms)


def make_order_state(o: TopOrder, t: TableSet) -> OrderState:
    return OrderState.fresh(o, t)


def _affected_span(prop: OrderProposal) -> tuple[int, int]:
    if prop.kind == "adjacent":
        k = prop.params[0]
        return k, k + 1
    a, b = prop.params
    return min(a, b), max(a, b)


def q0_step(
    s: OrderState,
    t: TableSet,
    rng: np.random.Generator,
    counter: Optional[OpCounter] = None,
    debug: bool = False,
) -> tuple[OrderState, bool]:
    """One MH move over orders; accepts with min(1, exp(delta))."""
    new_order, prop = propose_order(s.order, rng)
    lo, hi = _affected_span(prop)
    delta = 0.0
    changed: list[tuple[int, int, float]] = []
    for pos in range(lo, hi + 1):
        node = new_order.perm[pos]
        nt = t.nodes[node]
        code = banned_code(node, new_order, nt.cands)
        if counter is not None:
            counter.entries_read += nt.m
        if code != s.codes[node]:
            term = float(nt.banned[code])
            delta += term - float(s.terms[node])
            changed.append((node, code, term))
            if counter is not None:
                counter.entries_read += 1
    if delta >= 0 or rng.random() < np.exp(delta):
        codes = s.codes.copy()
        terms = s.terms.copy()
        for node, code, term in changed:
            codes[node] = code
            terms[node] = term
        new_state = OrderState(new_order, codes, terms)
        if debug:
            full = restricted_order_logscore(new_order, t)
            if not np.isclose(new_state.log_score, full, atol=1e-10, rtol=0):
                raise AssertionError(
                    f"incremental score {new_state.log_score} != full {full}"
                )
        return new_state, True
    return s, False


def sample_dag_given(
    o: TopOrder,
    t: TableSet,
    rng: np.random.Generator,
    plus_one: bool = False,
) -> Dag:
    """Draw parent sets node-wise proportional to their table scores.

    With plus_one, every base set may also be extended by one preceding
    out-of-space candidate, weighted by the plus table.
    """
    parents = [0] * t.p
    for nt in t.nodes:
        i = nt.node
        code = banned_code(i, o, nt.cands)
        m = nt.m
        free = ((1 << m) - 1) ^ code
        subs = np.fromiter(submasks(free), dtype=np.int64)
        weights = [nt.score[subs]]
        masks = [np.array([_decode(int(s), nt.cands) for s in subs], dtype=object)]
        if plus_one:
            pre_cols = [c for c, j in enumerate(nt.plus_cands) if o.pos[j] < o.pos[i]]
            for c in pre_cols:
                weights.append(nt.plus_score[subs, c])
                extra = 1 << nt.plus_cands[c]
                masks.append(np.array([_decode(int(s), nt.cands) | extra for s in subs], dtype=object))
        w = np.concatenate(weights)
        all_masks = np.concatenate(masks)
        top = np.max(w)
        if top == -np.inf:
            parents[i] = 0
            continue
        probs = np.exp(w - top)
        probs /= probs.sum()
        pick = int(rng.choice(len(probs), p=probs))
        parents[i] = int(all_masks[pick])
    return Dag(t.p, tuple(parents))


def _decode(code: int, cands: tuple[int, ...]) -> int:
    mask = 0
    for k in iter_bits(code):
        mask |= 1 << cands[k]
    return mask


def warm_start_order(h: SearchSpace) -> TopOrder:
    """Deterministic initial order: descending total degree in the space."""
    deg = [0] * h.p
    for i in range(h.p):
        deg[i] += h.allowed[i].bit_count()
        for j in iter_bits(h.allowed[i]):
            deg[j] += 1
    perm = sorted(range(h.p), key=lambda i: (-deg[i], i))
    return TopOrder(tuple(perm))
