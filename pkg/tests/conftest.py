import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gridfield.core import Aabb, PositionalEncoding
from gridfield.grid import init_network_grid


@pytest.fixture(scope="session")
def unit_aabb():
    return Aabb((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))


@pytest.fixture(scope="session")
def encoding():
    return PositionalEncoding()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_grid(unit_aabb):
    """A 4x4x4 lattice of randomly initialized tiny networks."""
    return init_network_grid(unit_aabb, (4, 4, 4), seed=11)


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
