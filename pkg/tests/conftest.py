import numpy as np
import pytest

from choremarket.instances import crossed_linear_2x2, single_agent_two_chores
from choremarket.model import DisutilitySpec, validate


@pytest.fixture(scope="session")
def example_market():
    return crossed_linear_2x2()


@pytest.fixture(scope="session")
def divergence_markets():
    return {rho: single_agent_two_chores(rho) for rho in (1.0, 1.5, 2.0, 3.0)}


@pytest.fixture(scope="session")
def ces_symmetric_2():
    return validate([1.0], [DisutilitySpec.ces([1.0, 1.0], 2.0)])


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
