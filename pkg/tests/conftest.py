import numpy as np
import pytest

from orbitlab.expansion import build_bundle
from orbitlab.geometry import make_scenario
from orbitlab.loops import find_geodesic, manifold_loop

N = 256


@pytest.fixture(scope="session")
def circle():
    return make_scenario("circle", b0=-1.0)


@pytest.fixture(scope="session")
def circle_x0(circle):
    return manifold_loop(circle, circle.seed_loop((1,), N))


@pytest.fixture(scope="session")
def circle_bundle(circle, circle_x0):
    return build_bundle(circle, circle_x0)


@pytest.fixture(scope="session")
def torus():
    return make_scenario("torus", b0=-1.0)


@pytest.fixture(scope="session")
def meridian(torus):
    return find_geodesic(torus, torus.seed_loop((0, 1), N), (0, 1)).loop


@pytest.fixture(scope="session")
def meridian_bundle(torus, meridian):
    return build_bundle(torus, meridian, quotient_symmetries=True)


@pytest.fixture(scope="session")
def tilted_torus():
    """Torus whose normal Hessian varies across the inner equator, which
    makes that geodesic nondegenerate."""
    return make_scenario("torus", b0=-1.0, b_grad=[0.05, 0.0, 0.1])


@pytest.fixture(scope="session")
def sphere():
    return make_scenario("sphere", b0=-2.0, potential="quartic")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
