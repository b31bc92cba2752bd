"""Exhaustive small-p posteriors, error-bound reports and exact kernels.

Everything here is oracle machinery: full enumeration over DAGs, orders and
search spaces, total-variation / Hellinger bounds between the full and
restricted order posteriors, and exact transition matrices of the samplers
for stationarity checks. Enumeration is deliberately direct (sums over
explicit DAG sets) so it stays independent of the table-based fast paths it
is used to validate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import Optional

import numpy as np

from .bge import NEG_INF, log_sum_exp
from .graphs import Dag, SearchSpace, TopOrder, enumerate_dags, order_compatible
from .order_kernel import apply_proposal, enumerate_proposals
from .sampler import BroodConfig, node_logsum_tables, restricted_logsum, enumerate_spaces


@dataclass
class ExactPosterior:
    """Enumerated DAG and order posteriors for small p."""

    p: int
    dags: list[Dag]
    log_scores: np.ndarray          # per DAG, aligned with dags
    orders: list[TopOrder]
    compat: np.ndarray              # bool, dags x orders

    @classmethod
    def from_scorer(cls, scorer, p: int) -> "ExactPosterior":
        if p > 5:
            raise ValueError("exact enumeration limited to p <= 5")
        dags = enumerate_dags(p)
        cache: dict[tuple[int, int], float] = {}

        def local(i: int, mask: int) -> float:
            key = (i, mask)
            if key not in cache:
                cache[key] = scorer.node_score(i, mask)
            return cache[key]

        scores = np.array([
            sum(local(i, g.parents[i]) for i in range(p)) for g in dags
        ])
        return cls._finish(p, dags, scores)

    @classmethod
    def from_scores(cls, p: int, dag_log_scores: dict[Dag, float]) -> "ExactPosterior":
        """Injection hook: arbitrary score landscapes, -inf allowed."""
        dags = enumerate_dags(p)
        scores = np.array([dag_log_scores[g] for g in dags])
        return cls._finish(p, dags, scores)

    @classmethod
    def _finish(cls, p, dags, scores) -> "ExactPosterior":
        orders = [TopOrder(perm) for perm in permutations(range(p))]
        compat = np.zeros((len(dags), len(orders)), dtype=bool)
        for a, g in enumerate(dags):
            for b, o in enumerate(orders):
                compat[a, b] = order_compatible(g, o)
        return cls(p=p, dags=dags, log_scores=scores, orders=orders, compat=compat)

    # -- posteriors -------------------------------------------------------

    def dag_posterior(self) -> dict[Dag, float]:
        total = log_sum_exp(self.log_scores)
        return {g: math.exp(s - total) for g, s in zip(self.dags, self.log_scores)}

    def _order_logmass(self, keep: np.ndarray) -> np.ndarray:
        out = np.full(len(self.orders), NEG_INF)
        for b in range(len(self.orders)):
            sel = keep & self.compat[:, b]
            if sel.any():
                out[b] = log_sum_exp(self.log_scores[sel])
        return out

    def _normalize(self, logmass: np.ndarray) -> dict[tuple, float]:
        total = log_sum_exp(logmass)
        if total == NEG_INF:
            raise ValueError("distribution has zero total mass")
        return {o.perm: math.exp(v - total) for o, v in zip(self.orders, logmass)}

    def order_posterior(self) -> dict[tuple, float]:
        return self._normalize(self._order_logmass(np.ones(len(self.dags), dtype=bool)))

    def _in_space(self, h: SearchSpace) -> np.ndarray:
        return np.array([
            all((g.parents[i] & ~h.allowed[i]) == 0 for i in range(self.p))
            for g in self.dags
        ])

    def restricted_order_posterior(self, h: SearchSpace) -> dict[tuple, float]:
        return self._normalize(self._order_logmass(self._in_space(h)))

    def omitted_order_posterior(self, h: SearchSpace) -> dict[tuple, float]:
        return self._normalize(self._order_logmass(~self._in_space(h)))

    def epsilon(self, h: SearchSpace) -> float:
        """Omitted mass of the order-space mixture.

        The full order posterior is an exact mixture of the restricted and
        omitted order posteriors with this weight on the omitted part. Each
        DAG counts once per compatible order here; that multiplicity is what
        the order posterior itself integrates over, and it is what makes the
        mixture identity hold exactly.
        """
        keep = self._in_space(h)
        total = log_sum_exp(self._order_logmass(np.ones(len(self.dags), dtype=bool)))
        inside = log_sum_exp(self._order_logmass(keep)) if keep.any() else NEG_INF
        return float(1.0 - math.exp(inside - total))

    def dag_mass_outside(self, h: SearchSpace) -> float:
        """Multiplicity-free posterior mass on DAGs outside the space."""
        keep = self._in_space(h)
        total = log_sum_exp(self.log_scores)
        inside = log_sum_exp(self.log_scores[keep]) if keep.any() else NEG_INF
        return float(1.0 - math.exp(inside - total))


def exact_posteriors(d, alpha_mu: float = 1.0, alpha_w: Optional[float] = None) -> ExactPosterior:
    """Full enumeration from a data set under the default scoring."""
    from .bge import BgeScorer

    return ExactPosterior.from_scorer(BgeScorer(d, alpha_mu=alpha_mu, alpha_w=alpha_w), d.p)


def tv_distance(a: dict, b: dict) -> float:
    _check_dist(a)
    _check_dist(b)
    keys = set(a) | set(b)
    return 0.5 * sum(abs(a.get(k, 0.0) - b.get(k, 0.0)) for k in keys)


def hellinger(a: dict, b: dict) -> float:
    _check_dist(a)
    _check_dist(b)
    keys = set(a) | set(b)
    return math.sqrt(sum(
        (math.sqrt(a.get(k, 0.0)) - math.sqrt(b.get(k, 0.0))) ** 2 for k in keys
    ))


def _check_dist(d: dict) -> None:
    total = sum(d.values())
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {total}, not 1")


def c_constant(ep: ExactPosterior, h: SearchSpace) -> Optional[float]:
    """Disagreement coefficient between restricted and omitted posteriors.

    Defined through the square-root mixture sum; undefined (None) when the
    space omits no posterior mass.
    """
    eps = ep.epsilon(h)
    if eps <= 0.0:
        return None
    pi_h = ep.restricted_order_posterior(h)
    pi_not = ep.omitted_order_posterior(h)
    a_sum = sum(
        math.sqrt((1.0 - eps) * pi_h[k] ** 2 + eps * pi_h[k] * pi_not.get(k, 0.0))
        for k in pi_h
    )
    return (1.0 - a_sum ** 2) / eps


@dataclass
class TvReport:
    epsilon: float
    c_const: Optional[float]
    hellinger: float
    tv: float
    lower: float
    upper: float
    mixture_gap: float

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "c": self.c_const,
            "hellinger": self.hellinger,
            "tv": self.tv,
            "lower": self.lower,
            "upper": self.upper,
            "mixture_gap": self.mixture_gap,
        }


def verify_bounds(ep: ExactPosterior, h: SearchSpace) -> TvReport:
    """TV distance between restricted and full order posteriors with its
    sandwich bounds, plus a pointwise check of the mixture identity."""
    eps = ep.epsilon(h)
    pi_full = ep.order_posterior()
    pi_h = ep.restricted_order_posterior(h)
    tv = tv_distance(pi_h, pi_full)
    dh = hellinger(pi_h, pi_full)
    if eps <= 0.0:
        gap = max(abs(pi_full[k] - pi_h[k]) for k in pi_full)
        return TvReport(eps, None, dh, tv, 0.0, 0.0, gap)
    pi_not = ep.omitted_order_posterior(h)
    gap = max(
        abs(pi_full[k] - ((1.0 - eps) * pi_h[k] + eps * pi_not.get(k, 0.0)))
        for k in pi_full
    )
    if gap > 1e-12:
        raise RuntimeError(f"mixture identity violated by {gap:.3e}")
    c = c_constant(ep, h)
    inner = max(0.0, 1.0 - c * eps)
    lower = 1.0 - math.sqrt(inner)
    upper = min(math.sqrt(max(0.0, 2.0 - 2.0 * math.sqrt(inner))), 1.0)
    return TvReport(eps, c, dh, tv, lower, upper, gap)


# ---------------------------------------------------------------------------
# exact transition matrices


def stationary_distribution(P: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Stationary row vector of a row-stochastic matrix.

    Solved directly (one balance row replaced by the normalization), then the
    residual ||pi P - pi||_1 is checked against tol.
    """
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    resid = float(np.abs(pi @ P - pi).sum())
    if resid > tol:
        raise RuntimeError(f"stationary solve residual {resid:.3e} exceeds {tol:.1e}")
    return pi


def exact_q0_matrix(order_logscores: dict[tuple, float], p: int) -> tuple[list[tuple], np.ndarray]:
    """Exact one-step matrix of the order kernel at a fixed space."""
    orders = [perm for perm in permutations(range(p))]
    index = {perm: k for k, perm in enumerate(orders)}
    P = np.zeros((len(orders), len(orders)))
    props = enumerate_proposals(p)
    for a, perm in enumerate(orders):
        ls_a = order_logscores[perm]
        for prop, prob in props:
            target = apply_proposal(perm, prop)
            ls_b = order_logscores[target]
            alpha = 1.0 if ls_b >= ls_a else math.exp(ls_b - ls_a)
            b = index[target]
            P[a, b] += prob * alpha
            P[a, a] += prob * (1.0 - alpha)
    return orders, P


@dataclass
class MixtureKernel:
    """Exact transition matrix of the mixture kernel over (space, order)."""

    p: int
    spaces: list[tuple[int, ...]]
    orders: list[tuple[int, ...]]
    matrix: np.ndarray
    logsums: np.ndarray  # spaces x orders restricted log sums

    def state_index(self, h_masks: tuple[int, ...], perm: tuple[int, ...]) -> int:
        return self.spaces.index(h_masks) * len(self.orders) + self.orders.index(perm)

    def stationary(self, tol: float = 1e-12) -> np.ndarray:
        return stationary_distribution(self.matrix, tol)


def exact_mixture_kernel(cfg: BroodConfig, scorer, p: int) -> MixtureKernel:
    """Build the exact mixture kernel; feasible for p <= 3."""
    if p > 3:
        raise ValueError("mixture-kernel enumeration limited to p <= 3")
    f = node_logsum_tables(p, scorer)
    spaces = list(enumerate_spaces(p, cfg.cap))
    orders = [TopOrder(perm) for perm in permutations(range(p))]
    n_s, n_o = len(spaces), len(orders)
    space_index = {h: k for k, h in enumerate(spaces)}
    logsums = np.array([
        [restricted_logsum(h, o, f) for o in orders] for h in spaces
    ])

    def rates(h_idx: int, o_idx: int):
        h = spaces[h_idx]
        base = logsums[h_idx, o_idx]
        births, deaths = [], []
        for dst in range(p):
            for src in range(p):
                if src == dst:
                    continue
                bit = 1 << src
                if h[dst] & bit:
                    h2 = h[:dst] + (h[dst] ^ bit,) + h[dst + 1:]
                    ratio = math.exp(logsums[space_index[h2], o_idx] - base)
                    deaths.append((h2, 2.0 * cfg.c_star * ratio))
                else:
                    if cfg.cap is not None and h[dst].bit_count() >= cfg.cap:
                        continue
                    h2 = h[:dst] + (h[dst] | bit,) + h[dst + 1:]
                    ratio = math.exp(logsums[space_index[h2], o_idx] - base)
                    births.append((h2, 0.5 * ratio))
        return births, deaths

    waiting = np.empty((n_s, n_o))
    all_rates = {}
    for a in range(n_s):
        for b in range(n_o):
            births, deaths = rates(a, b)
            total = sum(r for _, r in births) + sum(r for _, r in deaths)
            waiting[a, b] = math.inf if total == 0.0 else 1.0 / total
            all_rates[(a, b)] = (births, deaths)

    n = n_s * n_o
    P = np.zeros((n, n))
    props = enumerate_proposals(p)
    order_index = {o.perm: k for k, o in enumerate(orders)}
    for a in range(n_s):
        for b, o in enumerate(orders):
            s = a * n_o + b
            # order kernel, space fixed
            ls_here = logsums[a, b]
            for prop, prob in props:
                target = apply_proposal(o.perm, prop)
                b2 = order_index[target]
                ls_there = logsums[a, b2]
                alpha = 1.0 if ls_there >= ls_here else math.exp(ls_there - ls_here)
                P[s, a * n_o + b2] += (1.0 - cfg.ell) * prob * alpha
                P[s, s] += (1.0 - cfg.ell) * prob * (1.0 - alpha)
            # space kernel, order fixed
            births, deaths = all_rates[(a, b)]
            w = waiting[a, b]
            if not math.isfinite(w):
                P[s, s] += cfg.ell
                continue
            for h2, rate in births + deaths:
                a2 = space_index[h2]
                w2 = waiting[a2, b]
                alpha = min(1.0, w2 / w) if math.isfinite(w2) else 1.0
                P[s, a2 * n_o + b] += cfg.ell * w * rate * alpha
                P[s, s] += cfg.ell * w * rate * (1.0 - alpha)
    return MixtureKernel(
        p=p,
        spaces=spaces,
        orders=[o.perm for o in orders],
        matrix=P,
        logsums=logsums,
    )
