"""Shared pytest setup: project root on sys.path and test-mode logging"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from utils.logger import logger


@pytest.fixture(autouse=True, scope="session")
def _testing_logger():
    logger.configure_for_testing()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_ball(rng, count, max_norm=1.0):
    """Random polarizations uniform in direction with norms in [0, max_norm)"""
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    return directions * (max_norm * rng.random(count))[:, None]
