import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from swm.synthcity import generate_city, sample_streetview_db  # noqa: E402


@pytest.fixture(scope="session")
def city():
    return generate_city(0)


@pytest.fixture(scope="session")
def db(city):
    return sample_streetview_db(city)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
