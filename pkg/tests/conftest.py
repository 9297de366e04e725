import numpy as np
import pytest

from hjbfd.lattice import build_grid, disk
from hjbfd.problem import builtin_linear_manufactured, builtin_monge_ampere, builtin_two_control
from hjbfd.stencil import canonical_directions


@pytest.fixture(scope="session")
def unit_disk():
    return disk()


@pytest.fixture(scope="session")
def canon2():
    return canonical_directions(2)


@pytest.fixture(scope="session")
def manufactured():
    return builtin_linear_manufactured()


@pytest.fixture(scope="session")
def two_control():
    return builtin_two_control()


@pytest.fixture(scope="session")
def monge_ampere():
    return builtin_monge_ampere(n_controls=8)


@pytest.fixture(scope="session")
def builtins(manufactured, two_control, monge_ampere):
    return [manufactured, two_control, monge_ampere]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def grid_for(p, h):
    return build_grid(p.domain, h, p.directions)
