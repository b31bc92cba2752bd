"""Per-node score tables with banned-set aggregation.

For node i with ordered candidate parents ``cands`` (the allowed parents in
the search space), table rows are indexed by subset codes: bit k of a code
stands for ``cands[k]``. Four tables are kept per node:

  score[s]           log score of parent set s
  banned[b]          log-sum-exp of score[s] over all s disjoint from b
  plus_score[s, j]   log score of s plus one extra parent outside the space
  plus_banned[b, j]  the banned aggregate of plus_score column j

``banned[b]`` answers order queries in O(1): with b the code of allowed
parents positioned at-or-after i in the order, it is exactly node i's factor
of the restricted order score. The aggregation is a subset-sum transform, so
``banned`` as stored equals that transform read backwards (banning b is
summing over subsets of its complement).

Space moves touch one node only. Expansion interleaves the existing score
rows with the added parent's plus column and evaluates fresh scores only for
rows containing the new parent; contraction is pure memoization (row
selection, banned-entry copies, and log-minus-exp differences) and performs
zero score evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bge import log_minus_exp
from .graphs import Edge, SearchSpace, TopOrder, iter_bits


@dataclass
class OpCounter:
    """Cheap instrumentation for complexity assertions in tests."""

    entries_read: int = 0


def subset_decode(code: int, cands: tuple[int, ...]) -> int:
    """Node bitmask for a subset code over candidate slots."""
    mask = 0
    for k in iter_bits(code):
        mask |= 1 << cands[k]
    return mask


def _banned_transform(scores: np.ndarray) -> np.ndarray:
    """banned[b] = LSE{ scores[s] : s & b == 0 }, per column if 2-d."""
    f = scores.copy()
    rows = f.shape[0]
    m = rows.bit_length() - 1
    idx = np.arange(rows)
    for k in range(m):
        bit = 1 << k
        has = (idx & bit) != 0
        f[has] = np.logaddexp(f[has], f[idx[has] ^ bit])
    return f[::-1].copy()


@dataclass(frozen=True)
class NodeTables:
    node: int
    cands: tuple[int, ...]
    score: np.ndarray
    banned: np.ndarray
    plus_cands: tuple[int, ...]
    plus_score: np.ndarray
    plus_banned: np.ndarray

    @property
    def m(self) -> int:
        return len(self.cands)

    def cand_slot(self, j: int) -> int:
        return self.cands.index(j)

    def plus_slot(self, j: int) -> int:
        return self.plus_cands.index(j)


def build_node_tables(i: int, h: SearchSpace, scorer, cap: Optional[int] = None) -> NodeTables:
    """Fill all four tables for node i by direct evaluation."""
    cands = tuple(iter_bits(h.allowed[i]))
    m = len(cands)
    if cap is not None and m > cap:
        raise ValueError(f"node {i} has {m} allowed parents, cap is {cap}")
    plus_cands = tuple(j for j in range(h.p) if j != i and not (h.allowed[i] >> j) & 1)
    n_rows = 1 << m
    score = np.empty(n_rows)
    plus_score = np.empty((n_rows, len(plus_cands)))
    for code in range(n_rows):
        pa_mask = subset_decode(code, cands)
        score[code] = scorer.node_score(i, pa_mask)
        plus_score[code] = scorer.plus_one_scores(i, pa_mask, plus_cands)
    return NodeTables(
        node=i,
        cands=cands,
        score=score,
        banned=_banned_transform(score),
        plus_cands=plus_cands,
        plus_score=plus_score,
        plus_banned=_banned_transform(plus_score),
    )


def banned_code(i: int, o: TopOrder, cands: tuple[int, ...]) -> int:
    """Subset code of allowed parents of i positioned at-or-after i in o."""
    pos_i = o.pos[i]
    code = 0
    for k, c in enumerate(cands):
        if o.pos[c] > pos_i:
            code |= 1 << k
    return code


@dataclass(frozen=True)
class TableSet:
    """One NodeTables per node, tied to the space they were built for.

    Value semantics: space moves return a new TableSet sharing the untouched
    per-node tables, so a rejected proposal never needs an undo.
    """

    nodes: tuple[NodeTables, ...]
    space: SearchSpace
    cap: Optional[int] = None

    @property
    def p(self) -> int:
        return self.space.p

    def with_node(self, nt: NodeTables, space: SearchSpace) -> "TableSet":
        nodes = list(self.nodes)
        nodes[nt.node] = nt
        return TableSet(tuple(nodes), space, self.cap)


def build_tables(h: SearchSpace, scorer, cap: Optional[int] = None) -> TableSet:
    if cap is None:
        cap = h.cap
    if h.cap != cap:
        # the chain cap governs from here on, not the construction-time cap
        h = SearchSpace(h.p, h.allowed, cap)
    nodes = tuple(build_node_tables(i, h, scorer, cap) for i in range(h.p))
    return TableSet(nodes, h, cap)


def restricted_order_logscore(o: TopOrder, t: TableSet, counter: Optional[OpCounter] = None) -> float:
    """Sum of per-node banned aggregates at the order's banned codes."""
    total = 0.0
    for nt in t.nodes:
        code = banned_code(nt.node, o, nt.cands)
        total += nt.banned[code]
        if counter is not None:
            counter.entries_read += 1 + nt.m
    return total


def plus_order_logscore(o: TopOrder, t: TableSet, counter: Optional[OpCounter] = None) -> float:
    """Order score relaxed by at most one out-of-space parent per node.

    Per node the bracketed sum is LSE of the base banned aggregate and the
    plus-banned entries of candidates that precede the node in the order;
    candidates at-or-after the node contribute nothing.
    """
    total = 0.0
    for nt in t.nodes:
        i = nt.node
        code = banned_code(i, o, nt.cands)
        terms = [nt.banned[code]]
        if counter is not None:
            counter.entries_read += 1 + nt.m
        for col, j in enumerate(nt.plus_cands):
            if o.pos[j] < o.pos[i]:
                terms.append(nt.plus_banned[code, col])
                if counter is not None:
                    counter.entries_read += 1
        total += float(np.logaddexp.reduce(terms))
    return total


def _drop_bit(codes: np.ndarray, k: int) -> np.ndarray:
    low = codes & ((1 << k) - 1)
    return low | ((codes >> 1) & ~((1 << k) - 1))


def _insert_zero_bit(codes: np.ndarray, k: int) -> np.ndarray:
    low = codes & ((1 << k) - 1)
    return low | ((codes & ~((1 << k) - 1)) << 1)


def expand_node_tables(t: NodeTables, e: Edge, scorer, cap: Optional[int] = None) -> NodeTables:
    """Tables for node e.dst after adding e.src to its allowed parents.

    Score rows not containing the new parent are the old score rows; rows
    containing it are the old plus column. Plus scores for the remaining
    candidates are reused where the base set avoids e.src and evaluated in a
    batch where it does not.
    """
    if e.dst != t.node:
        raise ValueError("edge destination does not match the node of these tables")
    if e.src not in t.plus_cands:
        raise ValueError(f"{e.src} is not an addable parent of node {t.node}")
    m = t.m
    if cap is not None and m + 1 > cap:
        raise ValueError(f"expansion would exceed the in-degree cap {cap}")
    new_cands = tuple(sorted(t.cands + (e.src,)))
    k = new_cands.index(e.src)
    src_col = t.plus_slot(e.src)
    new_plus = tuple(j for j in t.plus_cands if j != e.src)
    keep_cols = [t.plus_slot(j) for j in new_plus]

    codes = np.arange(1 << (m + 1))
    base = _drop_bit(codes, k)
    has = ((codes >> k) & 1) == 1
    new_score = np.where(has, t.plus_score[base, src_col], t.score[base])

    new_plus_score = np.empty((1 << (m + 1), len(new_plus)))
    new_plus_score[~has] = t.plus_score[np.ix_(base[~has], keep_cols)]
    for code in codes[has]:
        pa_mask = subset_decode(int(code), new_cands)
        new_plus_score[code] = scorer.plus_one_scores(t.node, pa_mask, new_plus)

    return NodeTables(
        node=t.node,
        cands=new_cands,
        score=new_score,
        banned=_banned_transform(new_score),
        plus_cands=new_plus,
        plus_score=new_plus_score,
        plus_banned=_banned_transform(new_plus_score),
    )


def contract_node_tables(t: NodeTables, e: Edge) -> NodeTables:
    """Tables for node e.dst after removing e.src; no score evaluations.

    Retained banned entries are the old entries that banned e.src. The plus
    column for re-adding e.src is recovered by log-minus-exp of superset and
    subset banned aggregates.
    """
    if e.dst != t.node:
        raise ValueError("edge destination does not match the node of these tables")
    if e.src not in t.cands:
        raise ValueError(f"{e.src} is not a removable parent of node {t.node}")
    m = t.m
    k = t.cand_slot(e.src)
    bit = 1 << k
    new_cands = tuple(c for c in t.cands if c != e.src)
    new_plus = tuple(sorted(t.plus_cands + (e.src,)))
    q = new_plus.index(e.src)
    keep_cols = [t.plus_slot(j) for j in new_plus if j != e.src]

    codes = np.arange(1 << (m - 1)) if m > 1 else np.arange(1)
    emb = _insert_zero_bit(codes, k)
    new_score = t.score[emb]
    new_banned = t.banned[emb | bit]

    new_plus_score = np.empty((len(codes), len(new_plus)))
    new_plus_banned = np.empty_like(new_plus_score)
    if keep_cols:
        old_cols_order = [c for c in range(len(new_plus)) if c != q]
        new_plus_score[:, old_cols_order] = t.plus_score[np.ix_(emb, keep_cols)]
        new_plus_banned[:, old_cols_order] = t.plus_banned[np.ix_(emb | bit, keep_cols)]
    new_plus_score[:, q] = t.score[emb | bit]
    new_plus_banned[:, q] = [
        log_minus_exp(float(t.banned[b]), float(t.banned[b | bit])) for b in emb
    ]

    return NodeTables(
        node=t.node,
        cands=new_cands,
        score=new_score,
        banned=new_banned,
        plus_cands=new_plus,
        plus_score=new_plus_score,
        plus_banned=new_plus_banned,
    )


def expand_tables(t: TableSet, e: Edge, scorer) -> TableSet:
    """New TableSet for the space with e added; only node e.dst changes."""
    from .graphs import space_add_edge

    new_space = space_add_edge(t.space, e)
    nt = expand_node_tables(t.nodes[e.dst], e, scorer, cap=t.cap)
    return t.with_node(nt, new_space)


def contract_tables(t: TableSet, e: Edge) -> TableSet:
    from .graphs import space_remove_edge

    new_space = space_remove_edge(t.space, e)
    nt = contract_node_tables(t.nodes[e.dst], e)
    return t.with_node(nt, new_space)


def node_tables_to_json(t: NodeTables) -> dict:
    return {
        "node": t.node,
        "cands": list(t.cands),
        "score": [float(v) for v in t.score],
        "banned": [float(v) for v in t.banned],
    }
