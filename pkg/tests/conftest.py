import numpy as np
import pytest

from zipper.graph import FeatureSet, Graph, gen_synthetic


@pytest.fixture
def g4():
    """Four-vertex workhorse: edges {0->1, 0->2, 2->1, 3->0}."""
    return Graph.from_edges([0, 0, 2, 3], [1, 2, 1, 0], num_vertices=4)


@pytest.fixture
def ones_features():
    def make(g, dim=2):
        return FeatureSet(np.ones((g.num_vertices, dim), dtype=np.float32))
    return make


@pytest.fixture
def rmat_small():
    return gen_synthetic("rmat", 64, 512, seed=3)
