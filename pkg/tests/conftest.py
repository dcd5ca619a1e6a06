import numpy as np
import pytest

from graphmoe.graphs import GraphDataset
from graphmoe.sparse import SparseMatrix


def path_graph(n: int = 3, d: int = 2, classes: int = 2) -> GraphDataset:
    """Simple path 0-1-...-(n-1) with arbitrary features."""
    src = np.arange(n - 1, dtype=np.int64)
    dst = src + 1
    r = np.concatenate([src, dst])
    c = np.concatenate([dst, src])
    adj = SparseMatrix.from_coo(n, n, r, c, np.ones(r.shape[0]))
    rng = np.random.default_rng(0)
    return GraphDataset(name="path", num_nodes=n, num_features=d,
                        num_classes=classes, adjacency=adj,
                        features=rng.normal(size=(n, d)),
                        labels=(np.arange(n) % classes).astype(np.int64))


@pytest.fixture
def path3() -> GraphDataset:
    return path_graph(3)
