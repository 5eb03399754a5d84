import numpy as np
import pytest

from otfs_sbl.dd_channel import PilotLayout, SystemParams


@pytest.fixture(scope="session")
def desk():
    return SystemParams.desk()


@pytest.fixture(scope="session")
def desk_layout(desk):
    return PilotLayout.centered(desk)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def cn(rng, shape):
    """Unit-variance circular complex Gaussian draws."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
