import numpy as np
import pytest

from simgraph.graph import Graph, from_adjacency


def random_graph(rng: np.random.Generator, n_max: int = 16, p_edge: float = 0.3) -> Graph:
    """Random directed graph without self-loops or duplicate edges."""
    n = int(rng.integers(2, n_max + 1))
    adjacency = []
    for v in range(n):
        others = np.array([u for u in range(n) if u != v])
        mask = rng.random(n - 1) < p_edge
        adjacency.append(others[mask])
    start = int(rng.integers(0, n))
    return from_adjacency(adjacency, start_vertex=start)


def random_vectors(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.normal(size=(n, dim)).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
