"""Ground-truth graph generation and linear-SEM data synthesis.

Graphs come from one of three random models (Erdos-Renyi, a two-block
stochastic block model, or a three-cluster hierarchical block model) and are
made acyclic by orienting along a random topological order. Data follow the
linear structural model X_i = e_i + sum_j B_ji X_j with edge weights drawn
uniformly from [0.4, 2] and errors either standard Gaussian or an even
mixture of N(0,1) and N(0,2). A lightweight PC-style skeleton (Fisher-z
partial correlation tests up to a small conditioning size) provides initial
search spaces; externally produced space files can be used instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.stats import norm

from .bge import DataSet
from .graphs import Dag, Edge, SearchSpace, TopOrder, iter_bits


@dataclass(frozen=True)
class ErModel:
    expected_degree: float = 4.0


@dataclass(frozen=True)
class SbmModel:
    block_probs: tuple[float, float] = (0.8, 0.2)


@dataclass(frozen=True)
class HsbmModel:
    proportions: tuple[float, float, float] = (0.1, 0.3, 0.6)


GraphModel = Union[ErModel, SbmModel, HsbmModel]


@dataclass(frozen=True)
class SemSpec:
    p: int
    n: int
    graph_model: GraphModel = field(default_factory=ErModel)
    error_model: str = "gaussian"  # or "mixture"
    weight_low: float = 0.4
    weight_high: float = 2.0
    seed: int = 0
    # N(0, 2) is read as variance 2 by default; set True for sd 2 instead
    mixture_scale_is_sd: bool = False

    def __post_init__(self):
        if self.error_model not in ("gaussian", "mixture"):
            raise ValueError("error_model must be 'gaussian' or 'mixture'")
        if self.p < 1 or self.n < 1:
            raise ValueError("p and n must be positive")


@dataclass(frozen=True)
class GroundTruth:
    dag: Dag
    weights: dict[Edge, float]
    data: DataSet


def sbm_connection_matrix(p: int) -> np.ndarray:
    return np.array([
        [min(0.15, 6.0 / p), min(0.01, 2.0 / p)],
        [min(0.01, 2.0 / p), min(0.08, 4.0 / p)],
    ])


def hsbm_cluster3_matrix(p: int) -> np.ndarray:
    return np.array([
        [min(0.2, 8.0 / p), min(0.01, 1.0 / p), min(0.2, 8.0 / p)],
        [min(0.01, 1.0 / p), 0.0, min(0.08, 4.0 / p)],
        [min(0.2, 8.0 / p), min(0.08, 4.0 / p), min(0.08, 4.0 / p)],
    ])


def proportional_sizes(p: int, proportions) -> list[int]:
    """Largest-remainder allocation so sizes sum to p exactly."""
    raw = [p * q for q in proportions]
    sizes = [int(math.floor(r)) for r in raw]
    rest = p - sum(sizes)
    order = sorted(range(len(raw)), key=lambda k: raw[k] - sizes[k], reverse=True)
    for k in order[:rest]:
        sizes[k] += 1
    return sizes


def _orient_by_order(p: int, undirected_pairs, rng: np.random.Generator) -> Dag:
    order = TopOrder(tuple(int(v) for v in rng.permutation(p)))
    edges = []
    for i, j in undirected_pairs:
        if order.pos[i] < order.pos[j]:
            edges.append((i, j))
        else:
            edges.append((j, i))
    return Dag.from_edges(p, edges)


def _acyclify_directed(p: int, directed_pairs, rng: np.random.Generator) -> Dag:
    order = TopOrder(tuple(int(v) for v in rng.permutation(p)))
    edges = [(j, i) for j, i in directed_pairs if order.pos[j] < order.pos[i]]
    return Dag.from_edges(p, edges)


def sample_graph(spec: SemSpec, rng: np.random.Generator) -> Dag:
    p = spec.p
    model = spec.graph_model
    if isinstance(model, ErModel):
        q = model.expected_degree / (p - 1) if p > 1 else 0.0
        pairs = [(i, j) for i in range(p) for j in range(i + 1, p) if rng.random() < q]
        return _orient_by_order(p, pairs, rng)
    if isinstance(model, SbmModel):
        blocks = (rng.random(p) >= model.block_probs[0]).astype(int)
        conn = sbm_connection_matrix(p)
        pairs = [
            (j, i)
            for j in range(p) for i in range(p)
            if j != i and rng.random() < conn[blocks[j], blocks[i]]
        ]
        return _acyclify_directed(p, pairs, rng)
    if isinstance(model, HsbmModel):
        pairs, _, _ = hsbm_directed_pairs(p, model.proportions, rng)
        return _acyclify_directed(p, pairs, rng)
    raise TypeError(f"unknown graph model {model!r}")


def hsbm_directed_pairs(p: int, proportions, rng: np.random.Generator):
    """Directed edge proposals of the hierarchical model, before the
    acyclifying order filter; clusters are disjoint (no between-cluster
    edges). Returns (pairs, cluster id per node, block id per node)."""
    sizes = proportional_sizes(p, proportions)
    bounds = np.cumsum([0] + sizes)
    cluster_of = np.zeros(p, dtype=int)
    block_of = np.zeros(p, dtype=int)
    pairs = []
    for c in range(3):
        nodes = list(range(bounds[c], bounds[c + 1]))
        if not nodes:
            continue
        cluster_of[nodes] = c
        if c == 0:
            conn = np.array([[min(0.1, 4.0 / p)]])
            sub = np.zeros(len(nodes), dtype=int)
        elif c == 1:
            conn = sbm_connection_matrix(p)
            sub = (rng.random(len(nodes)) >= 1.0 / 3.0).astype(int)
        else:
            conn = hsbm_cluster3_matrix(p)
            sub = rng.choice(3, size=len(nodes), p=[1 / 6, 1 / 3, 1 / 2])
        block_of[nodes] = sub
        for a, u in enumerate(nodes):
            for b, v in enumerate(nodes):
                if u != v and rng.random() < conn[sub[a], sub[b]]:
                    pairs.append((u, v))
    return pairs, cluster_of, block_of


def sample_sem(g: Dag, spec: SemSpec, rng: np.random.Generator) -> GroundTruth:
    """Edge weights and data generated along a topological order of g."""
    p, n = spec.p, spec.n
    weights = {
        e: float(rng.uniform(spec.weight_low, spec.weight_high)) for e in g.edges()
    }
    if spec.error_model == "gaussian":
        errs = rng.standard_normal((n, p))
    else:
        scale2 = 2.0 if spec.mixture_scale_is_sd else math.sqrt(2.0)
        comp = rng.random((n, p)) < 0.5
        errs = rng.standard_normal((n, p)) * np.where(comp, 1.0, scale2)
    x = np.zeros((n, p))
    for i in _topo_order(g):
        x[:, i] = errs[:, i]
        for j in iter_bits(g.parents[i]):
            x[:, i] += weights[Edge(j, i)] * x[:, j]
    return GroundTruth(dag=g, weights=weights, data=DataSet.from_raw(x))


def _topo_order(g: Dag) -> list[int]:
    remaining = set(range(g.p))
    placed = 0
    out = []
    while remaining:
        ready = sorted(i for i in remaining if (g.parents[i] & ~placed) == 0)
        for i in ready:
            out.append(i)
            placed |= 1 << i
            remaining.discard(i)
    return out


# ---------------------------------------------------------------------------
# PC-style skeleton


def default_pc_alpha(p: int) -> float:
    return min(0.4, 20.0 / p)


def plus_one_cap(p: int) -> int:
    return max(10, math.ceil(3 + 0.05 * p))


def fixed_cap(p: int) -> int:
    return max(12, round(3 + 0.06 * p))


def _fisher_z_pval(rho: float, n: int, cond: int) -> float:
    rho = float(np.clip(rho, -1 + 1e-12, 1 - 1e-12))
    dof = n - cond - 3
    stat = math.sqrt(dof) * abs(math.atanh(rho))
    return 2.0 * norm.sf(stat)


def _partial_corr(corr: np.ndarray, i: int, j: int, cond: tuple[int, ...]) -> float:
    idx = [i, j, *cond]
    sub = corr[np.ix_(idx, idx)]
    try:
        omega = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        return 0.0
    denom = math.sqrt(abs(omega[0, 0] * omega[1, 1]))
    if denom == 0.0:
        return 0.0
    return float(-omega[0, 1] / denom)


def pc_skeleton(
    d: DataSet,
    alpha: Optional[float] = None,
    max_cond: int = 1,
    cap: Optional[int] = None,
) -> SearchSpace:
    """Undirected skeleton from Fisher-z tests, as a symmetric search space.

    A deliberately small PC stage: conditioning sets grow only to max_cond.
    When a degree cap is given, the strongest marginal associations are kept
    and edges are dropped from both directions together, so the output stays
    symmetric.
    """
    from itertools import combinations

    p, n = d.p, d.n
    if alpha is None:
        alpha = default_pc_alpha(p)
    if n <= p + 3 and max_cond > 0:
        warnings.warn("sample size too small for conditional tests; using order 0 only")
        max_cond = 0
    sd = np.sqrt(np.diag(d.xtx))
    sd[sd == 0] = 1.0
    corr = d.xtx / np.outer(sd, sd)
    np.fill_diagonal(corr, 1.0)

    adj = {i: set(range(p)) - {i} for i in range(p)}
    strength = {}
    for i in range(p):
        for j in range(i + 1, p):
            if _fisher_z_pval(corr[i, j], n, 0) > alpha:
                adj[i].discard(j)
                adj[j].discard(i)
            else:
                strength[(i, j)] = abs(corr[i, j])
    for level in range(1, max_cond + 1):
        pairs = [(i, j) for i in range(p) for j in adj[i] if i < j]
        for i, j in pairs:
            if j not in adj[i]:
                continue
            removed = False
            for side in ((i, j), (j, i)):
                pool = sorted(adj[side[0]] - {side[1]})
                if len(pool) < level:
                    continue
                for cond in combinations(pool, level):
                    rho = _partial_corr(corr, i, j, cond)
                    if _fisher_z_pval(rho, n, level) > alpha:
                        adj[i].discard(j)
                        adj[j].discard(i)
                        strength.pop((i, j), None)
                        removed = True
                        break
                if removed:
                    break

    kept = sorted(strength, key=lambda e: (-strength[e], e))
    degree = [0] * p
    edges = []
    for i, j in kept:
        if j not in adj[i]:
            continue
        if cap is not None and (degree[i] >= cap or degree[j] >= cap):
            continue
        edges.extend([(i, j), (j, i)])
        degree[i] += 1
        degree[j] += 1
    return SearchSpace.from_edges(p, edges, cap=cap)
