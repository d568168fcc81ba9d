import numpy as np
import pytest

from graphon_lq.graphon import Constant, MinMax, PowerLaw
from graphon_lq.model import GameCoefficients, assemble_gamma


@pytest.fixture
def bench():
    return GameCoefficients.benchmark()


@pytest.fixture
def gm_bench(bench):
    return assemble_gamma(bench)


@pytest.fixture(params=["constant", "power_law", "min_max"])
def family(request):
    return {"constant": (Constant(1.0), 1), "power_law": (PowerLaw(-0.4), 1),
            "min_max": (MinMax(), 40)}[request.param]


def decoupled_coeffs(a=-1.0, b=1.0, m0=8.0, v0=0.25, T=3.0):
    """No aggregate in dynamics or costs."""
    return GameCoefficients(a, b, 0.0, [[1, 0, 0], [0, 1, 0], [0, 0, 0]], [[1, 0], [0, 0]], T, m0, v0)


def sup(a):
    return float(np.max(np.abs(a)))
