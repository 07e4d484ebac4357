import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("stopcal", max_examples=100, derandomize=True, deadline=None, print_blob=True)
settings.load_profile("stopcal")


def grid(lo, hi, step):
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 12)


@pytest.fixture
def bm_phi():
    from stopcal import Eigenfunction, GridFunction

    x = grid(0.0, 10.0, 1e-3)
    return Eigenfunction(GridFunction(x, np.cosh(x), "x"))
