import numpy as np
import pytest

from mtl_asymptotics.quadrature import QuadratureGrid


@pytest.fixture(scope="session")
def grid24():
    return QuadratureGrid(24)


@pytest.fixture(scope="session")
def grid32():
    return QuadratureGrid(32)


@pytest.fixture(scope="session")
def grid48():
    return QuadratureGrid(48)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
