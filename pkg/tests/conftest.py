import numpy
import pytest

from app.harmonic.harmonicMap import shoot


@pytest.fixture(scope="session")
def profile_l1_n1():
    return shoot(1, 1)


@pytest.fixture(scope="session")
def profile_l2_n1():
    return shoot(2, 1)


@pytest.fixture
def rng():
    return numpy.random.default_rng(20240611)


@pytest.fixture(scope="session")
def profile_cache():
    profiles = {}

    def get(ell, n):
        if (ell, n) not in profiles:
            profiles[ell, n] = shoot(ell, n)
        return profiles[ell, n]

    return get
