import numpy as np
import pytest

from aclab.noise import NoiseFamily
from aclab.potential import MollifierSpec, PotentialSpec
from aclab.spatial import build_model


@pytest.fixture(scope="session")
def pot():
    return PotentialSpec()


@pytest.fixture(scope="session")
def moll():
    return MollifierSpec()


@pytest.fixture(scope="session")
def noise(pot):
    return NoiseFamily(potential=pot)


@pytest.fixture(scope="session")
def model():
    return build_model(1, 32, 1.0, "dirichlet")


@pytest.fixture(scope="session")
def neumann():
    return build_model(1, 32, 1.0, "neumann")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
