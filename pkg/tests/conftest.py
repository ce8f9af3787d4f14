from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


def central_difference(fun, x, rel_step=1e-6):
    """Central-difference gradient with step ``rel_step * (1 + ||x||)``."""
    h = rel_step * (1.0 + np.linalg.norm(x))
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g
