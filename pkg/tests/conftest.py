import numpy as np
import pytest

from mfluct.kernels import one_plus_cos


@pytest.fixture
def ref():
    return one_plus_cos()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
