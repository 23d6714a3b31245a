import numpy as np
import pytest

from graph import build_chain_graph
from model import Dataset, ModelSpec, Prior, validate_spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chain5():
    return build_chain_graph(5)


@pytest.fixture
def small_data():
    return Dataset.from_lists([[0.3, 0.1], [0.5], [], [1.2, 0.9, 1.1], [1.0]])


@pytest.fixture
def make_model():
    def _make(graph, data, p=0.5, k=0, prior=Prior.HORSESHOE, **kwargs):
        spec = ModelSpec(p=p, k=k, prior=prior, **kwargs)
        return validate_spec(spec, graph, data, backend="dense")
    return _make
