import numpy as np
import pytest

from brood.bge import DataSet
from brood.graphs import SearchSpace, TopOrder


def make_dataset(rng, p, n):
    """Correlated Gaussian data so scores are informative."""
    mix = rng.standard_normal((p, p)) + 0.5 * np.eye(p)
    return DataSet.from_raw(rng.standard_normal((n, p)) @ mix)


def random_space(rng, p, edge_prob=0.5, cap=None):
    pairs = [
        (i, j) for i in range(p) for j in range(p)
        if i != j and rng.random() < edge_prob
    ]
    if cap is not None:
        trimmed = []
        indeg = [0] * p
        for i, j in pairs:
            if indeg[j] < cap:
                trimmed.append((i, j))
                indeg[j] += 1
        pairs = trimmed
    return SearchSpace.from_edges(p, pairs, cap=cap)


def random_order(rng, p):
    return TopOrder(tuple(int(v) for v in rng.permutation(p)))


@pytest.fixture
def rng():
    return np.random.default_rng(20250811)
