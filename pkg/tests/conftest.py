import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from coma_bench import protocol

settings.register_profile("default", settings(max_examples=100, deadline=None))
settings.register_profile("ci", settings(max_examples=1000, deadline=None,
                                         suppress_health_check=[HealthCheck.too_slow]))
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def system():
    """Activated-ready chip pair on the AES-GCM profile (fast in pure Python)."""
    return protocol.build_system(n=64, profile="coma1", seed=3)


@pytest.fixture
def acorn_system():
    return protocol.build_system(n=64, profile="coma2", seed=4)
