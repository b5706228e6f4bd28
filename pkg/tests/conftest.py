import numpy as np
import pytest

from qevents.grids import Grid1D, Grid2D


@pytest.fixture
def grid64():
    return Grid1D(64, -16.0, 16.0)


@pytest.fixture
def grid2d_16():
    return Grid2D(Grid1D(16, -4.0, 4.0), Grid1D(16, -4.0, 4.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
