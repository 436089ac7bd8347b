# Root conftest: keeps the repo root on sys.path so tests can import `src.hashembed`.
import numpy as np
import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale runs that need downloaded datasets")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
