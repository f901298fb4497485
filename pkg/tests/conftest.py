import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical or end-to-end check")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def zscore_ok(emp, ref, se, n_se=3.0, slack=0.0):
    """Entry-wise ``|emp - ref| <= n_se * se + slack``."""
    return np.abs(np.asarray(emp) - np.asarray(ref)) <= n_se * np.asarray(se) + slack
