import math
import warnings

import pytest

from conecausal.causal_graph import ConeField
from conecausal.geometry import GridFactor, build_grid

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def ex1():
    grid = build_grid([GridFactor(True, 0, TWO_PI, 32), GridFactor(False, -2, 2, 33)])
    return ConeField.from_text("v1>=0 && v2>=0", grid)


@pytest.fixture(scope="session")
def ex2():
    grid = build_grid([GridFactor(True, 0, TWO_PI, 24), GridFactor(False, -4, 4, 33), GridFactor(False, -0.5, 0.5, 17)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ConeField.from_text("v2>=0 && v1*v2 >= x3^2*v1^2 + v3^2", grid)


@pytest.fixture(scope="session")
def mink():
    grid = build_grid([GridFactor(False, 0, 1, 65), GridFactor(False, -1, 1, 65)])
    return ConeField.from_text("v1 >= abs(v2)", grid)


@pytest.fixture(scope="session")
def mink33():
    grid = build_grid([GridFactor(False, 0, 1, 33), GridFactor(False, -1, 1, 33)])
    return ConeField.from_text("v1 >= abs(v2)", grid)
