import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from engine.geometry import Field, SymmetricDomain, build_grid
from engine.potential import Potential
from engine.profile1d import heteroclinic

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(REPO_ROOT, "data", "configs")


@pytest.fixture(scope="session")
def quartic():
    return Potential("quartic")


@pytest.fixture(scope="session")
def profile(quartic):
    return heteroclinic(quartic, l_max=20.0, h=0.01)


@pytest.fixture(scope="session")
def small_strip():
    """|x1| < 1, 0 < x2 < 1, h = 0.1"""
    return build_grid(SymmetricDomain.strip(1.0, 0.0, 1.0), 0.1)


@pytest.fixture(scope="session")
def tall_strip():
    """|x1| < 8, 0 < x2 < 8, h = 0.2"""
    return build_grid(SymmetricDomain.strip(8.0, 0.0, 8.0), 0.2)


def profile_field(grid, pr):
    values = grid.empty_values()
    mask = grid.defined
    values[mask] = pr.eval(grid.X1[mask])
    return Field(grid, values)


def odd_random_field(grid, rng, scale=1.0):
    """Нечётный по x1 случайный слой; на полосе значения тоже заданы"""
    raw = rng.normal(scale=scale, size=grid.shape)
    values = 0.5 * (raw - raw[:, ::-1])
    return Field(grid, np.where(grid.defined, values, np.nan))
