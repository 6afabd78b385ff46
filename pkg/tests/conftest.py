import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--full",
        action="store_true",
        default=False,
        help="run the full-scale (hours-long) coverage study as well",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "full: long-running studies gated behind --full"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full"):
        return
    skip = pytest.mark.skip(reason="needs --full (multi-hour coverage study)")
    for item in items:
        if "full" in item.keywords:
            item.add_marker(skip)
