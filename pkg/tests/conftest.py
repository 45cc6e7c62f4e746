import numpy as np
import pytest

from sdlab.gfunc import GFunction


@pytest.fixture(params=[("power_diff", 1.0), ("power_diff", 0.5), ("power_diff", 2.0),
                        ("odd_power_diff", 1), ("odd_power_diff", 3)],
                ids=lambda p: f"{p[0]}-{p[1]}")
def g_any(request):
    return GFunction(*request.param)


@pytest.fixture
def log_grid():
    return np.geomspace(0.05, 20.0, 200)
