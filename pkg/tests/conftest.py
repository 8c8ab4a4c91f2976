import os

import numpy as np
import pytest

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")


@pytest.fixture
def fixture_path():
    def resolve(name: str) -> str:
        return os.path.join(FIXTURES, name)

    return resolve


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)
