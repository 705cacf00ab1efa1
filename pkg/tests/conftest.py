import numpy as np
import pytest

from invfilter.lie import SE3_GROUP, SO3_GROUP
from invfilter.models import artificial_horizon, linear_equivalence, table3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def table3_scenario():
    return table3()


@pytest.fixture
def horizon_scenario():
    return artificial_horizon(horizon=200)


@pytest.fixture
def linear_scenario():
    return linear_equivalence()


@pytest.fixture
def random_rotations(rng):
    """Rotations with angles below pi - 0.1, away from the log branch cut."""

    def make(count):
        axis = rng.standard_normal((count, 3))
        axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
        angle = rng.uniform(0.0, np.pi - 0.1, size=count)
        return SO3_GROUP.exp(angle[:, None] * axis)

    return make


@pytest.fixture
def random_poses(rng, random_rotations):
    def make(count):
        poses = SE3_GROUP.identity((count,))
        poses[:, :3, :3] = random_rotations(count)
        poses[:, :3, 3] = rng.standard_normal((count, 3))
        return poses

    return make
