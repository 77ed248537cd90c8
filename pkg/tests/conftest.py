import numpy as np
import pytest

from ttrk.worldmap import GridMap, load_obstacle_set


def make_grid(size=32, resolution=0.4, occupied=()):
    cells = np.zeros((size, size), dtype=bool)
    for ix, iy in occupied:
        cells[ix, iy] = True
    return GridMap(resolution, cells)


@pytest.fixture(scope="session")
def train_set():
    return load_obstacle_set("train")


@pytest.fixture(scope="session")
def unseen_set():
    return load_obstacle_set("unseen")


@pytest.fixture
def empty_grid():
    return make_grid(size=64, resolution=0.4)
