"""Edge-probability estimation from DAG traces and the evaluation metrics.

Node pairs are binary instances labeled by the ground-truth graph; the
estimated edge probabilities are the scores. ROC AUC uses the rank statistic
with ties credited one half; PR AUC is the step-summed average precision.
Diagonal pairs are excluded everywhere. Skeleton mode works on unordered
pairs against the symmetrized truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .graphs import Dag, iter_bits


@dataclass(frozen=True)
class EdgeProbMatrix:
    probs: np.ndarray
    mode: str  # "directed" | "skeleton"


def edge_probs(trace: Sequence[Dag], mode: str = "directed") -> EdgeProbMatrix:
    """Per-pair edge frequencies over the sampled DAGs."""
    if not trace:
        raise ValueError("empty trace")
    if mode not in ("directed", "skeleton"):
        raise ValueError("mode must be 'directed' or 'skeleton'")
    p = trace[0].p
    counts = np.zeros((p, p))
    for g in trace:
        for i in range(p):
            for j in iter_bits(g.parents[i]):
                counts[j, i] += 1.0
    probs = counts / len(trace)
    if mode == "skeleton":
        probs = np.clip(probs + probs.T, 0.0, 1.0)
    np.fill_diagonal(probs, 0.0)
    return EdgeProbMatrix(probs=probs, mode=mode)


@dataclass(frozen=True)
class MetricsReport:
    roc_auc: Optional[float]
    pr_auc: Optional[float]
    pr_plus: Optional[float]
    pr_minus: Optional[float]
    runtime_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "roc_auc": self.roc_auc,
            "pr_auc": self.pr_auc,
            "pr_plus": self.pr_plus,
            "pr_minus": self.pr_minus,
            "runtime_seconds": self.runtime_seconds,
        }


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Mann-Whitney AUC with average ranks; None if one class is empty."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Average precision by step summation, grouping tied scores."""
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    ap = 0.0
    tp = 0
    seen = 0
    k = 0
    n = len(s)
    while k < n:
        k2 = k
        while k2 < n and s[k2] == s[k]:
            k2 += 1
        group_tp = int(y[k:k2].sum())
        tp += group_tp
        seen += k2 - k
        if group_tp:
            ap += group_tp / n_pos * (tp / seen)
        k = k2
    return float(ap)


def _pairs(p: int, mode: str):
    if mode == "skeleton":
        return [(i, j) for i in range(p) for j in range(i + 1, p)]
    return [(i, j) for i in range(p) for j in range(p) if i != j]


def evaluate(probs: EdgeProbMatrix, truth: Dag, runtime_seconds: float = 0.0) -> MetricsReport:
    p = truth.p
    if probs.probs.shape != (p, p):
        raise ValueError("probability matrix and truth disagree on p")
    truth_adj = np.zeros((p, p), dtype=bool)
    for i in range(p):
        for j in iter_bits(truth.parents[i]):
            truth_adj[j, i] = True
    if probs.mode == "skeleton":
        truth_adj = truth_adj | truth_adj.T
    pairs = _pairs(p, probs.mode)
    scores = np.array([probs.probs[i, j] for i, j in pairs])
    labels = np.array([truth_adj[i, j] for i, j in pairs])
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    return MetricsReport(
        roc_auc=roc_auc(scores, labels),
        pr_auc=pr_auc(scores, labels),
        pr_plus=float(scores[labels].mean()) if n_pos else None,
        pr_minus=float(scores[~labels].mean()) if n_neg else None,
        runtime_seconds=runtime_seconds,
    )
