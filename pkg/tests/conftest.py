import numpy as np
import pytest

import pdeopt as po


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid1d_small():
    return po.build_grid_1d(32)


@pytest.fixture(scope="session")
def grid2d_small():
    return po.build_grid_2d(8, 8)


@pytest.fixture(scope="session")
def ks_model_small(grid1d_small):
    return po.make_ks_model(grid1d_small, lam=30.0)


@pytest.fixture(scope="session")
def heat_model_small(grid2d_small):
    return po.make_heat_model(grid2d_small)


@pytest.fixture(scope="session")
def heat_model_linear(grid2d_small):
    return po.make_heat_model(grid2d_small, f_scalar=None)


def smooth_clamped(grid, amplitude=1.0):
    """Clamped-conforming 1-D profile (value and slope vanish at both ends)."""
    return amplitude * 0.5 * (1.0 - np.cos(2 * np.pi * grid.nodes))


def first_mode_2d(grid, amplitude=1.0):
    xx, yy = grid.meshgrid()
    return amplitude * (np.sin(np.pi * xx / grid.lx) * np.sin(np.pi * yy / grid.ly)).ravel()
