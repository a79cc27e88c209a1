import time

import numpy as np
import pytest

from advforecast import autodiff as ad
from advforecast.models import ForecastSample, SeriesForecaster


class LinearToy:
    """f(x) = scale * x, applied per forecast step; the exo input is the forecast."""

    kind = "series"

    def __init__(self, scale=1.0, horizon=1):
        self.scale = scale
        self.horizon = horizon

    def forward(self, history, exo, p=None):
        return ad.mul(ad.as_tensor(exo), self.scale)


class Deaf:
    """Ignores its exogenous input entirely."""

    kind = "series"
    horizon = 2

    def forward(self, history, exo, p=None):
        return ad.Tensor(np.zeros((len(history), 2)))


@pytest.fixture
def identity():
    return LinearToy(1.0)


@pytest.fixture
def small_series():
    return SeriesForecaster(hidden=6, history=4, horizon=3, seed=11)


@pytest.fixture
def series_samples():
    rng = np.random.default_rng(17)
    return [ForecastSample(rng.uniform(0, 1, 4), rng.normal(0, 1, 3), rng.uniform(0, 1, 3), sample_id=i)
            for i in range(12)]


# -- acceptance plumbing --------------------------------------------------------------

SESSION_START = time.perf_counter()
CRITERIA: dict[int, str] = {}


def pytest_collection_modifyitems(config, items):
    # acceptance runs last so the budget audit and the wall-clock check see the whole suite
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
