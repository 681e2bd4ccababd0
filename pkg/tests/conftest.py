import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT))

from graph_core import Graph, dataset_from_graph, generate_sbm  # noqa: E402


def make_graph(n, edges):
    src = np.array([u for u, _ in edges], dtype=np.int64)
    dst = np.array([v for _, v in edges], dtype=np.int64)
    return Graph.from_edges(n, src, dst)


@pytest.fixture
def g8():
    """Path 0-1-...-7 plus the chord 2-5"""
    return make_graph(8, [(i, i + 1) for i in range(7)] + [(2, 5)])


@pytest.fixture
def g8_forced_assignment():
    return np.array([0, 0, 0, 1, 1, 2, 2, 2], dtype=np.int64)


@pytest.fixture
def two_triangles():
    return make_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])


@pytest.fixture
def g8_dataset(g8):
    return dataset_from_graph(g8, 3, 2, seed=5)


@pytest.fixture(scope="session")
def sbm_small():
    """200 vertices in 4 planted blocks"""
    return generate_sbm(4, 50, 0.2, 0.01, seed=3)


@pytest.fixture(scope="session")
def sbm_benchmark():
    return generate_sbm(4, 100, 0.1, 0.005, seed=1)
