import numpy as np
import pytest

from vivqa.rng import RngStream


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stream():
    return RngStream(12345)
