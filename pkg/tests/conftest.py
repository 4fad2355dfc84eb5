"""
Shared fixtures for the test suite.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root directory to Python path
project_root = str(Path(__file__).parent.parent)
if project_root not in sys.path:
    sys.path.append(project_root)

from src.dataset import ANOMALOUS, NORMAL, Dataset, GraphRecord, er_graph  # noqa: E402
from src.utils import make_rng  # noqa: E402


@pytest.fixture
def p2():
    """Two nodes joined by one edge."""
    return GraphRecord(2, [(0, 1)], np.eye(2))


@pytest.fixture
def k3():
    """Triangle."""
    return GraphRecord(3, [(0, 1), (0, 2), (1, 2)], np.eye(3))


@pytest.fixture
def isolated_node():
    return GraphRecord(1, [], [[1.0]])


@pytest.fixture
def small_graphs():
    """Six-node graphs of both classes with three one-hot node labels."""
    rng = make_rng(3, "fixture")
    return [er_graph(6, 0.5, 3, rng, label=k % 2) for k in range(4)]


@pytest.fixture
def toy_dataset():
    """Sparse rings (normal) against dense graphs (anomalous): separable by Rayleigh Quotient."""
    rng = make_rng(11, "toy")
    records = []
    for k in range(40):
        n = int(rng.integers(6, 9))
        labels = rng.integers(0, 3, size=n)
        features = np.eye(3)[labels]
        if k % 4 == 0:
            record = er_graph(n, 0.9, 3, rng, label=ANOMALOUS)
            record = GraphRecord(n, record.edges, features, ANOMALOUS)
        else:
            ring = [(i, (i + 1) % n) for i in range(n)]
            record = GraphRecord(n, ring, features, NORMAL)
        records.append(record)
    return Dataset(tuple(records), 3, "toy")


def write_tu_files(directory, name, adjacency, indicator, graph_labels, node_labels):
    """Write the four TUDataset files from raw text."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for suffix, text in (("A", adjacency), ("graph_indicator", indicator),
                         ("graph_labels", graph_labels), ("node_labels", node_labels)):
        (directory / f"{name}_{suffix}.txt").write_text(text)
    return directory


@pytest.fixture
def two_graph_dir(tmp_path):
    return write_tu_files(tmp_path / "TWO", "TWO", "1, 2\n2, 1\n3, 4\n4, 3\n", "1\n1\n2\n2\n", "1\n-1\n",
                          "0\n1\n0\n0\n")
