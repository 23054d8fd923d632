import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from contverify.box import Box  # noqa: E402
from contverify.network import toy_network  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def toy_net():
    return toy_network()


@pytest.fixture
def unit_square():
    return Box.cube(-1.0, 1.0, 2)


@pytest.fixture
def enlarged_square():
    return Box.cube(-1.0, 1.1, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
