import numpy as np
import pytest

from mvloss import GridSpec, ProblemSpec
from mvloss import mckv

Z = 0.5


@pytest.fixture(scope="session")
def solve_cache():
    """Shared feedback solves keyed by (alpha, n_steps, t_end)."""
    cache = {}

    def get(alpha, n_steps, t_end=1.0):
        key = (alpha, n_steps, t_end)
        if key not in cache:
            cache[key] = mckv.solve(ProblemSpec(alpha, Z, GridSpec(t_end, n_steps)))
        return cache[key]

    return get
