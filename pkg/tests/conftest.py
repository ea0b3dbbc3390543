import numpy as np
import pytest
from hypothesis import settings

from genforest.convert import dt_to_gedt, rf_to_gef
from genforest.synthetic import toy_tree

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def toy():
    """The three-leaf tree, its data, and its generative twin."""
    tree, d = toy_tree()
    return tree, d, dt_to_gedt(tree, d)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
