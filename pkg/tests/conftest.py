import numpy as np
import pytest

from saoi_uav.model import SystemParams


@pytest.fixture
def params() -> SystemParams:
    return SystemParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)
