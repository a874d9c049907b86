import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("pdsplit", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pdsplit")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, floor=0.3):
    A = rng.normal(size=(n, n))
    return A @ A.T + floor * np.eye(n)
