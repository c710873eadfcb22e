import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tiermarket.core import random_instance, toy_instance

settings.register_profile(
    "repo", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")


@pytest.fixture
def toy():
    return toy_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def small_instances(seed, count, max_users=7, max_tiers=4):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        N = int(rng.integers(1, max_users + 1))
        T = int(rng.integers(1, max_tiers + 1))
        yield random_instance(rng, N, T)
