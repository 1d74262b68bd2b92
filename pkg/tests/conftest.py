import numpy as np
import pytest

from helpers.field_classes import DomainGrid, MetricField
from helpers.metric_families import block_metric, common_support_radius, conformal_bump


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_grid():
    return DomainGrid.ball(2, 32)


@pytest.fixture(scope="session")
def grid48():
    return DomainGrid.ball(2, 48)


@pytest.fixture(scope="session")
def unit_square():
    return DomainGrid.box([0.0, 0.0], [1.0, 1.0], 41)


@pytest.fixture(scope="session")
def euclid(small_grid):
    return MetricField.euclidean(small_grid)


@pytest.fixture(scope="session")
def conformal(small_grid):
    return conformal_bump(small_grid, 0.05, radius=common_support_radius([small_grid]))


@pytest.fixture(scope="session")
def block(small_grid):
    return block_metric(small_grid, 0.05, radius=common_support_radius([small_grid]))


@pytest.fixture(scope="session")
def conformal48(grid48):
    return conformal_bump(grid48, 0.05)


@pytest.fixture(scope="session")
def block48(grid48):
    return block_metric(grid48, 0.05)
