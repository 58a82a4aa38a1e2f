import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), ".."))

from src.geometry import Homography  # noqa: E402
from src.synthetic import random_homography  # noqa: E402

# Pure horizontal perspective: quasi-homography is (x, y (1 - 0.001 x)) right of x* = 0.
RUNNING_EXAMPLE = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.001, 0.0)


@pytest.fixture
def running_example():
    return Homography(RUNNING_EXAMPLE)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_homographies():
    """Fifty well-conditioned homographies with a visible perspective term."""
    gen = np.random.default_rng(2024)
    return [random_homography(gen) for _ in range(50)]
