import numpy as np
import pytest

from grapplesim.config import Config
from grapplesim.crane import load_description
from grapplesim.terrain import Heightfield


@pytest.fixture(scope="session")
def cfg():
    return Config()


@pytest.fixture(scope="session")
def desc():
    return load_description()


def flat_heightfield(extent: float = 28.0, cell: float = 0.25, z: float = 0.0) -> Heightfield:
    n = int(extent / cell) + 1
    return Heightfield(
        origin=np.array([-extent / 2, -extent / 2]),
        cell_size=cell,
        elevations=np.full((n, n), z, dtype=np.float32),
        seed=0,
    )


@pytest.fixture()
def flat_hf():
    return flat_heightfield()
