import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ctmc_dissipation.chain import CYCLE3, random_generator, stationary_distribution, validate_generator

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def chain_from_seed(seed, n, reversible=False, max_exit=3.0, density=1.0):
    rng = np.random.default_rng(seed)
    g = random_generator(rng, n, reversible=reversible, max_exit=max_exit, density=density)
    return g, stationary_distribution(g)


def interior_likelihood(rng, q, concentration=2.0):
    return rng.dirichlet(np.full(len(q), concentration)) / q


@pytest.fixture
def cycle3():
    g = validate_generator(np.array(CYCLE3))
    return g, stationary_distribution(g)


@pytest.fixture
def two_state():
    g = validate_generator(np.array([[-2.0, 2.0], [1.0, -1.0]]))
    return g, stationary_distribution(g)


@pytest.fixture
def rev4():
    return chain_from_seed(11, 4, reversible=True)


@pytest.fixture
def nonrev4():
    return chain_from_seed(12, 4, reversible=False)
