"""Graph, order and search-space primitives.

Everything downstream works on three immutable value types: a DAG stored as
per-node parent bitmasks (bit j of ``parents[i]`` set iff the edge j -> i is
present), a search space storing per-node allowed-parent bitmasks with an
optional in-degree cap, and a topological order stored as a permutation with
its inverse. Orders follow the convention that parents sit at *earlier*
positions: an edge j -> i is compatible with an order iff ``pos[j] < pos[i]``.

Node indices are 0-based throughout. Masks are plain Python ints, so there is
no hard width limit; the exhaustive enumeration helpers guard themselves to
small p.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterator, NamedTuple, Optional, Sequence

ENUM_MAX_P = 5


class Edge(NamedTuple):
    src: int
    dst: int


def iter_bits(mask: int) -> Iterator[int]:
    """Yield the set bit positions of ``mask`` in ascending order."""
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def submasks(mask: int) -> Iterator[int]:
    """Yield every submask of ``mask`` (including 0 and mask itself)."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def is_acyclic(parents: Sequence[int], p: int) -> bool:
    """Kahn-style elimination: repeatedly remove nodes with no remaining parents."""
    masks = list(parents)
    alive = (1 << p) - 1
    while alive:
        removable = 0
        for i in iter_bits(alive):
            if masks[i] & alive == 0:
                removable |= 1 << i
        if removable == 0:
            return False
        alive ^= removable
    return True


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph as per-node parent bitmasks."""

    p: int
    parents: tuple[int, ...]

    def __post_init__(self):
        if len(self.parents) != self.p:
            raise ValueError(f"expected {self.p} parent masks, got {len(self.parents)}")
        full = (1 << self.p) - 1
        for i, mask in enumerate(self.parents):
            if mask & (1 << i):
                raise ValueError(f"self-loop at node {i}")
            if mask & ~full:
                raise ValueError(f"parent mask of node {i} references nodes >= p")
        if not is_acyclic(self.parents, self.p):
            raise ValueError("graph has a directed cycle")

    @classmethod
    def from_edges(cls, p: int, edges: Sequence[tuple[int, int]]) -> "Dag":
        masks = [0] * p
        for src, dst in edges:
            masks[int(dst)] |= 1 << int(src)
        return cls(p, tuple(masks))

    def edges(self) -> list[Edge]:
        return [Edge(j, i) for i in range(self.p) for j in iter_bits(self.parents[i])]

    def n_edges(self) -> int:
        return sum(mask.bit_count() for mask in self.parents)


@dataclass(frozen=True)
class SearchSpace:
    """Directed graph of allowed edges; need not be acyclic.

    ``allowed[i]`` bit j set means the edge j -> i may appear in a sampled
    DAG. ``cap`` bounds the allowed in-degree per node when set.
    """

    p: int
    allowed: tuple[int, ...]
    cap: Optional[int] = None

    def __post_init__(self):
        if len(self.allowed) != self.p:
            raise ValueError(f"expected {self.p} allowed masks, got {len(self.allowed)}")
        full = (1 << self.p) - 1
        for i, mask in enumerate(self.allowed):
            if mask & (1 << i):
                raise ValueError(f"self-loop at node {i}")
            if mask & ~full:
                raise ValueError(f"allowed mask of node {i} references nodes >= p")
            if self.cap is not None and mask.bit_count() > self.cap:
                raise ValueError(
                    f"node {i} has {mask.bit_count()} allowed parents, cap is {self.cap}"
                )

    @classmethod
    def from_edges(cls, p: int, edges: Sequence[tuple[int, int]], cap: Optional[int] = None) -> "SearchSpace":
        masks = [0] * p
        for src, dst in edges:
            if src == dst:
                raise ValueError("self-loop edge")
            masks[int(dst)] |= 1 << int(src)
        return cls(p, tuple(masks), cap)

    @classmethod
    def complete(cls, p: int, cap: Optional[int] = None) -> "SearchSpace":
        full = (1 << p) - 1
        return cls(p, tuple(full ^ (1 << i) for i in range(p)), cap)

    @classmethod
    def empty(cls, p: int, cap: Optional[int] = None) -> "SearchSpace":
        return cls(p, (0,) * p, cap)

    def edges(self) -> list[Edge]:
        return [Edge(j, i) for i in range(self.p) for j in iter_bits(self.allowed[i])]

    def n_edges(self) -> int:
        return sum(mask.bit_count() for mask in self.allowed)

    def has_edge(self, e: Edge) -> bool:
        return bool(self.allowed[e.dst] & (1 << e.src))


@dataclass(frozen=True)
class TopOrder:
    """Permutation of node indices; ``perm[k]`` is the node at position k."""

    perm: tuple[int, ...]
    pos: tuple[int, ...] = field(default=())

    def __post_init__(self):
        p = len(self.perm)
        if sorted(self.perm) != list(range(p)):
            raise ValueError("perm is not a permutation of 0..p-1")
        if not self.pos:
            pos = [0] * p
            for k, node in enumerate(self.perm):
                pos[node] = k
            object.__setattr__(self, "pos", tuple(pos))
        elif any(self.pos[self.perm[k]] != k for k in range(p)):
            raise ValueError("pos is not the inverse of perm")

    @property
    def p(self) -> int:
        return len(self.perm)

    def predecessor_mask(self, i: int) -> int:
        """Bitmask of nodes strictly before node i."""
        mask = 0
        for k in range(self.pos[i]):
            mask |= 1 << self.perm[k]
        return mask


def order_compatible(g: Dag, o: TopOrder) -> bool:
    """True iff every edge j -> i of g has j at an earlier position than i."""
    if g.p != o.p:
        raise ValueError(f"dimension mismatch: DAG has p={g.p}, order has p={o.p}")
    for i in range(g.p):
        for j in iter_bits(g.parents[i]):
            if o.pos[j] >= o.pos[i]:
                return False
    return True


def _check_enum_p(p: int) -> None:
    if p > ENUM_MAX_P:
        raise ValueError(f"exhaustive enumeration limited to p <= {ENUM_MAX_P}, got {p}")


def enumerate_dags(p: int) -> list[Dag]:
    """All labeled DAGs on p nodes, each once.

    Recursive assignment of parent masks node by node, pruning prefixes that
    already contain a cycle (a cycle only involves edges into its own nodes,
    so it shows up as soon as the last of those nodes is assigned).
    """
    _check_enum_p(p)
    full = (1 << p) - 1
    out: list[Dag] = []
    masks = [0] * p

    def assign(i: int) -> None:
        if i == p:
            out.append(Dag(p, tuple(masks)))
            return
        for sub in submasks(full ^ (1 << i)):
            masks[i] = sub
            if is_acyclic(masks, p):
                assign(i + 1)
        masks[i] = 0

    assign(0)
    return out


def dags_in(h: SearchSpace, o: Optional[TopOrder] = None) -> list[Dag]:
    """All DAGs with parent sets inside h, optionally compatible with o."""
    _check_enum_p(h.p)
    p = h.p
    out: list[Dag] = []
    masks = [0] * p
    if o is not None:
        limits = [h.allowed[i] & o.predecessor_mask(i) for i in range(p)]
    else:
        limits = list(h.allowed)

    def assign(i: int) -> None:
        if i == p:
            # order-compatible assignments are acyclic by construction
            if o is not None or is_acyclic(masks, p):
                out.append(Dag(p, tuple(masks)))
            return
        for sub in submasks(limits[i]):
            masks[i] = sub
            assign(i + 1)
        masks[i] = 0

    assign(0)
    return out


def compatible_orders(g: Dag) -> list[TopOrder]:
    """All linear extensions of g."""
    _check_enum_p(g.p)
    out = []
    for perm in permutations(range(g.p)):
        o = TopOrder(perm)
        if order_compatible(g, o):
            out.append(o)
    return out


def space_add_edge(h: SearchSpace, e: Edge) -> SearchSpace:
    if e.src == e.dst:
        raise ValueError("self-loop edge")
    if h.has_edge(e):
        raise ValueError(f"edge {e.src}->{e.dst} already present")
    if h.cap is not None and h.allowed[e.dst].bit_count() >= h.cap:
        raise ValueError(f"node {e.dst} is at the in-degree cap {h.cap}")
    allowed = list(h.allowed)
    allowed[e.dst] |= 1 << e.src
    return SearchSpace(h.p, tuple(allowed), h.cap)


def space_remove_edge(h: SearchSpace, e: Edge) -> SearchSpace:
    if not h.has_edge(e):
        raise ValueError(f"edge {e.src}->{e.dst} not present")
    allowed = list(h.allowed)
    allowed[e.dst] &= ~(1 << e.src)
    return SearchSpace(h.p, tuple(allowed), h.cap)


# ---------------------------------------------------------------------------
# serialization


def graph_to_json(g: Dag | SearchSpace) -> dict:
    return {"p": g.p, "edges": [[e.src, e.dst] for e in g.edges()]}


def dag_from_json(obj: dict) -> Dag:
    return Dag.from_edges(obj["p"], [tuple(e) for e in obj["edges"]])


def space_from_json(obj: dict, cap: Optional[int] = None) -> SearchSpace:
    return SearchSpace.from_edges(obj["p"], [tuple(e) for e in obj["edges"]], cap=cap)


def load_space(path: str, cap: Optional[int] = None) -> SearchSpace:
    with open(path) as fh:
        return space_from_json(json.load(fh), cap=cap)


def adjacency_to_csv(g: Dag | SearchSpace, path: str) -> None:
    """Dense 0/1 adjacency, row j / column i holding the j -> i indicator."""
    if isinstance(g, Dag):
        masks = g.parents
    else:
        masks = g.allowed
    rows = [[0] * g.p for _ in range(g.p)]
    for i in range(g.p):
        for j in iter_bits(masks[i]):
            rows[j][i] = 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerows(rows)


def adjacency_from_csv(path: str) -> list[list[int]]:
    with open(path, newline="") as fh:
        return [[int(v) for v in row] for row in csv.reader(fh) if row]
