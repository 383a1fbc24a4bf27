import os

import numpy as np
import pytest

from hzdgait.control import load_controller
from hzdgait.model import compass, fivelink, threelink

GAITS = os.path.join(os.path.dirname(__file__), "..", "src", "hzdgait", "gaits")


@pytest.fixture(scope="session")
def compass_model():
    return compass()


@pytest.fixture(scope="session")
def threelink_model():
    return threelink()


@pytest.fixture(scope="session")
def fivelink_model():
    return fivelink()


@pytest.fixture(scope="session")
def compass_gait():
    return load_controller(os.path.join(GAITS, "compass.json"))


@pytest.fixture(scope="session")
def fivelink_gait():
    return load_controller(os.path.join(GAITS, "fivelink.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
