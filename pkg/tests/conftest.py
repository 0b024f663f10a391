import numpy as np
import pytest

from qlandscape.landscape import LandscapeProblem
from qlandscape.quantum_core import basis_state, four_level_system
from qlandscape.singularity import find_singular_extremals


@pytest.fixture(scope="session")
def four_level():
    return four_level_system()


@pytest.fixture(scope="session")
def e1():
    return basis_state(4, 0)


@pytest.fixture(scope="session")
def e4():
    return basis_state(4, 3)


@pytest.fixture(scope="session")
def problem(four_level, e1, e4):
    return LandscapeProblem(four_level, e1, e4, 10.0, 256)


@pytest.fixture(scope="session")
def extremals_256(four_level, e1):
    """Two order-2 singular extremals from psi0 = e1 on the default grid."""
    return find_singular_extremals(four_level, 2, 10.0, 256, psi0=e1, start_seed=1)


@pytest.fixture(scope="session")
def extremal_2048(four_level, e1):
    return find_singular_extremals(four_level, 1, 10.0, 2048, psi0=e1, start_seed=1)[0][1]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
