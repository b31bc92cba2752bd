"""Gaussian data handling and the decomposable BGe node score.

All scores live in natural-log space; ``-inf`` marks impossible or singular
configurations and NaN never escapes this module. The local score of node i
with parent set Pa is a constant (depending only on |Pa|) plus a ratio of two
determinants of principal submatrices of the posterior scale matrix R:

    |R[Pa, Pa]| ** ((a* - p + l) / 2)  /  |R[Pa+i, Pa+i]| ** ((a* - p + l + 1) / 2)

with l = |Pa| and a* the posterior degrees of freedom. The second determinant
is evaluated through the Schur complement of i on Pa, so each score needs one
Cholesky factor of R[Pa, Pa] plus a triangular solve. The batched one-extra-
parent scorer reuses that factor across all candidates, which is what makes
search-space expansions affordable.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .graphs import iter_bits

NEG_INF = float("-inf")

# guard for positive definiteness: Schur complements / pivots below this are
# treated as singular and score -inf instead of aborting
PD_EPS = 1e-12

# log_minus_exp: how far c may sit below b before we call it an error rather
# than rounding noise
LME_SLACK = 1e-9


def log_sum_exp(values) -> float:
    """log(sum(exp(values))) without leaving log space; empty gives -inf.

    Accumulated with pairwise shifted additions, so uniform shifts pass
    through exactly and -inf entries drop out.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return NEG_INF
    return float(np.logaddexp.reduce(arr))


def _log1mexp(x: float) -> float:
    # log(1 - exp(-x)) for x > 0, split at log 2 per the usual guidance
    if x <= math.log(2.0):
        return math.log(-math.expm1(-x))
    return math.log1p(-math.exp(-x))


def log_minus_exp(c: float, b: float) -> float:
    """Inverse of log_sum_exp in one slot: the a with LSE([a, b]) = c.

    Requires c >= b (up to slack); equality collapses to -inf.
    """
    if b == NEG_INF:
        return c
    if c == NEG_INF:
        raise ValueError("log_minus_exp: c = -inf but b is finite")
    diff = c - b
    if diff < -LME_SLACK:
        raise ValueError(f"log_minus_exp: c < b by {-diff:.3e}")
    if diff <= 0.0:
        return NEG_INF
    out = c + _log1mexp(diff)
    return out if math.isfinite(out) else NEG_INF


def chol_rank1_update(l: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cholesky factor of A + v v^T given the lower factor of A, in O(K^2)."""
    L = np.array(l, dtype=float)
    w = np.array(v, dtype=float).ravel()
    k = L.shape[0]
    if w.shape[0] != k:
        raise ValueError("vector length does not match factor dimension")
    for j in range(k):
        if L[j, j] <= 0.0:
            raise ValueError("factor lost positive definiteness")
        r = math.hypot(L[j, j], w[j])
        c = r / L[j, j]
        s = w[j] / L[j, j]
        L[j, j] = r
        if j + 1 < k:
            L[j + 1:, j] = (L[j + 1:, j] + s * w[j + 1:]) / c
            w[j + 1:] = c * w[j + 1:] - s * L[j + 1:, j]
    return L


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class DataSet:
    """Column-centered data with its cross-product matrix."""

    n: int
    p: int
    x: np.ndarray       # centered, n x p
    xtx: np.ndarray     # x.T @ x on centered columns
    means: np.ndarray   # raw column means, kept for reporting

    @classmethod
    def from_raw(cls, raw: np.ndarray) -> "DataSet":
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2:
            raise ValueError("data must be a 2-d array (rows = samples)")
        if not np.isfinite(raw).all():
            raise ValueError("data contains missing or non-finite values")
        n, p = raw.shape
        means = raw.mean(axis=0)
        centered = raw - means
        return cls(n=n, p=p, x=centered, xtx=centered.T @ centered, means=means)

    @classmethod
    def from_csv(cls, path: str, header: bool = False) -> "DataSet":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            if header:
                next(reader)
            for row in reader:
                if not row:
                    continue
                if any(cell.strip() == "" for cell in row):
                    raise ValueError(f"missing value in {path}")
                rows.append([float(cell) for cell in row])
        if not rows:
            raise ValueError(f"no data rows in {path}")
        return cls.from_raw(np.array(rows))


@dataclass(frozen=True)
class BgeHyper:
    """Posterior pieces of the BGe score for one data set."""

    p: int
    n: int
    alpha_mu: float
    alpha_w: float
    t_scale: float
    alpha_star: float
    r_mat: np.ndarray
    degenerate_cols: tuple[int, ...] = field(default=())


def build_hyper(d: DataSet, alpha_mu: float = 1.0, alpha_w: Optional[float] = None) -> BgeHyper:
    """Posterior scale matrix and degrees of freedom.

    Defaults: alpha_mu = 1, alpha_w = p + 2, prior scale T = t I with
    t = alpha_mu (alpha_w - p - 1) / (alpha_mu + 1), prior mean 0 on the
    centered columns (so the mean-shift term of the posterior scale vanishes).
    """
    if d.n < 1:
        raise ValueError("need at least one sample")
    if alpha_mu <= 0:
        raise ValueError("alpha_mu must be positive")
    if alpha_w is None:
        alpha_w = d.p + 2.0
    if alpha_w <= d.p - 1:
        raise ValueError(f"alpha_w must exceed p - 1 = {d.p - 1}")
    t = alpha_mu * (alpha_w - d.p - 1.0) / (alpha_mu + 1.0)
    if t <= 0:
        raise ValueError("prior scale t must be positive")
    r_mat = t * np.eye(d.p) + d.xtx
    degenerate = tuple(int(i) for i in range(d.p) if d.xtx[i, i] <= PD_EPS)
    if degenerate:
        warnings.warn(f"zero-variance columns {degenerate}; their scores may be -inf")
    return BgeHyper(
        p=d.p,
        n=d.n,
        alpha_mu=alpha_mu,
        alpha_w=alpha_w,
        t_scale=t,
        alpha_star=alpha_w + d.n,
        r_mat=r_mat,
        degenerate_cols=degenerate,
    )


class BgeScorer:
    """Local BGe scores over parent bitmasks, with an evaluation counter.

    ``eval_count`` tracks how many parent-set scores were computed; table
    contraction is required to leave it untouched.
    """

    def __init__(self, d: DataSet, hy: Optional[BgeHyper] = None,
                 alpha_mu: float = 1.0, alpha_w: Optional[float] = None):
        self.hyper = hy if hy is not None else build_hyper(d, alpha_mu, alpha_w)
        self.p = self.hyper.p
        self.n = self.hyper.n
        self.eval_count = 0
        self._const = [self._const_term(l) for l in range(self.p + 1)]

    def _const_term(self, l: int) -> float:
        hy = self.hyper
        return (
            0.5 * math.log(hy.alpha_mu / (hy.alpha_mu + hy.n))
            - 0.5 * hy.n * math.log(math.pi)
            + gammaln((hy.alpha_star - hy.p + l + 1) / 2.0)
            - gammaln((hy.alpha_w - hy.p + l + 1) / 2.0)
            + 0.5 * (hy.alpha_w - hy.p + 2 * l + 1) * math.log(hy.t_scale)
        )

    def _factor(self, idx: list[int]) -> Optional[tuple[np.ndarray, float]]:
        """Cholesky of R[idx, idx] and its log determinant; None if singular."""
        if not idx:
            return np.zeros((0, 0)), 0.0
        sub = self.hyper.r_mat[np.ix_(idx, idx)]
        try:
            chol = np.linalg.cholesky(sub)
        except np.linalg.LinAlgError:
            return None
        diag = np.diag(chol)
        if np.any(diag <= PD_EPS):
            return None
        return chol, 2.0 * float(np.sum(np.log(diag)))

    def node_score(self, i: int, pa_mask: int) -> float:
        """log marginal-likelihood contribution of node i with parents pa_mask.

        A uniform structure prior adds no per-node factor. Singular
        submatrices score -inf rather than raising.
        """
        if pa_mask & (1 << i):
            raise ValueError("node cannot be its own parent")
        self.eval_count += 1
        pa = list(iter_bits(pa_mask))
        l = len(pa)
        fac = self._factor(pa)
        if fac is None:
            return NEG_INF
        chol, logdet = fac
        r = self.hyper.r_mat
        if l == 0:
            schur = r[i, i]
        else:
            z = solve_triangular(chol, r[pa, i], lower=True)
            schur = r[i, i] - float(z @ z)
        if schur <= PD_EPS:
            return NEG_INF
        hy = self.hyper
        return (
            self._const[l]
            - 0.5 * logdet
            - 0.5 * (hy.alpha_star - hy.p + l + 1) * math.log(schur)
        )

    def plus_one_scores(self, i: int, pa_mask: int, cands: Sequence[int]) -> np.ndarray:
        """node_score(i, pa_mask | {j}) for every candidate j, batched.

        One Cholesky factor of the base set serves all candidates: each score
        needs only a triangular solve column and two Schur complements, so the
        per-candidate cost is O(l) on top of the shared O(l^2) solves.
        """
        cands = list(cands)
        m = len(cands)
        out = np.full(m, NEG_INF)
        if m == 0:
            return out
        if pa_mask & (1 << i):
            raise ValueError("node cannot be its own parent")
        for j in cands:
            if j == i or (pa_mask & (1 << j)):
                raise ValueError("candidate overlaps node or base parent set")
        self.eval_count += m
        pa = list(iter_bits(pa_mask))
        l = len(pa)
        fac = self._factor(pa)
        if fac is None:
            return out
        chol, logdet = fac
        r = self.hyper.r_mat
        hy = self.hyper
        if l == 0:
            uu = 0.0
            d = r[cands, cands].copy()
            w_num = r[cands, i].copy()
        else:
            u = solve_triangular(chol, r[pa, i], lower=True)
            uu = float(u @ u)
            z = solve_triangular(chol, r[np.ix_(pa, cands)], lower=True)
            d = r[cands, cands] - np.einsum("kj,kj->j", z, z)
            w_num = r[cands, i] - z.T @ u
        ok = d > PD_EPS
        schur = np.full(m, NEG_INF)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(ok, w_num / np.sqrt(np.where(ok, d, 1.0)), 0.0)
            schur = r[i, i] - uu - w * w
        good = ok & (schur > PD_EPS)
        if np.any(good):
            out[good] = (
                self._const[l + 1]
                - 0.5 * (logdet + np.log(d[good]))
                - 0.5 * (hy.alpha_star - hy.p + l + 2) * np.log(schur[good])
            )
        return out


class ConstantScorer:
    """Every parent set scores the same value; for kernel tests."""

    def __init__(self, p: int, value: float = 0.0):
        self.p = p
        self.value = value
        self.eval_count = 0

    def node_score(self, i: int, pa_mask: int) -> float:
        if pa_mask & (1 << i):
            raise ValueError("node cannot be its own parent")
        self.eval_count += 1
        return self.value

    def plus_one_scores(self, i: int, pa_mask: int, cands: Sequence[int]) -> np.ndarray:
        self.eval_count += len(cands)
        return np.full(len(cands), self.value)


class TableScorer:
    """Scores read from an explicit {(node, pa_mask): logscore} map.

    Lets tests inject arbitrary score landscapes (including -inf rows).
    """

    def __init__(self, p: int, scores: dict):
        self.p = p
        self.scores = scores
        self.eval_count = 0

    def node_score(self, i: int, pa_mask: int) -> float:
        self.eval_count += 1
        return self.scores[(i, pa_mask)]

    def plus_one_scores(self, i: int, pa_mask: int, cands: Sequence[int]) -> np.ndarray:
        self.eval_count += len(cands)
        return np.array([self.scores[(i, pa_mask | (1 << j))] for j in cands])
