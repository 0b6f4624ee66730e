import numpy as np
import pytest

from bri import validate_study


@pytest.fixture
def example_study():
    """The four-unit example: two controls, two treated."""
    return validate_study([0, 1, 1, 0], [1.2, 4.9, 3.4, 3.6])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
