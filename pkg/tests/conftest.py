"""Shared fixtures: tiny named graphs and random-graph generators."""

import numpy as np
import pytest

from spectext.corpus import Vocabulary
from spectext.graph import Graph


def make_graph(adjacency, words=None) -> Graph:
    adjacency = np.asarray(adjacency, dtype=np.float64)
    n = adjacency.shape[0]
    if words is None:
        words = [f"w{i}" for i in range(n)]
    return Graph(vocabulary=Vocabulary.from_words(words), adjacency=adjacency)


def is_connected_by_powers(adjacency: np.ndarray) -> bool:
    """Reachability oracle independent of the library: (I + A)^(n-1) > 0."""
    n = adjacency.shape[0]
    reach = np.eye(n) + (adjacency > 0)
    out = np.eye(n)
    for _ in range(n - 1):
        out = (out @ reach) > 0
    return bool(out.all())


def random_connected_graph(rng, max_nodes: int = 12) -> Graph:
    """Random weighted connected graph with 2..max_nodes nodes."""
    while True:
        n = int(rng.integers(2, max_nodes + 1))
        mask = rng.random((n, n)) < 0.45
        weights = rng.uniform(0.2, 3.0, size=(n, n))
        adjacency = np.where(mask, weights, 0.0)
        adjacency = np.triu(adjacency, k=1)
        adjacency = adjacency + adjacency.T
        if adjacency.any() and is_connected_by_powers(adjacency):
            return make_graph(adjacency)


@pytest.fixture
def p2() -> Graph:
    return make_graph([[0, 1], [1, 0]], words=["a", "b"])


@pytest.fixture
def p3() -> Graph:
    return make_graph([[0, 1, 0], [1, 0, 1], [0, 1, 0]], words=["a", "b", "c"])


@pytest.fixture
def k3() -> Graph:
    return make_graph([[0, 1, 1], [1, 0, 1], [1, 1, 0]], words=["a", "b", "c"])
