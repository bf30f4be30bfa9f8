import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ks_insense import Grid, KSHeatSystem, PhysicsParams, TimeGrid, build_mask  # noqa: E402


def make_system(N=32, M=64, T=1.0, alpha=0.5, gamma=1.0, beta=0.5, omega=(0.3, 0.6), obs=(0.5, 0.8)):
    g, tg = Grid(N), TimeGrid(T, M)
    return KSHeatSystem(g, tg, PhysicsParams(gamma, beta, alpha), build_mask(g, *omega), build_mask(g, *obs))


def bump(sys, x_c=0.65, w_x=0.1):
    t, x = sys.time.t[:, None], sys.grid.x[None, :]
    T = sys.time.T
    return np.exp(-((x - x_c) ** 2 / w_x**2 + (t - T / 2) ** 2 / (T / 8) ** 2)) * (t >= T / 4)


@pytest.fixture
def small_sys():
    return make_system(N=16, M=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
