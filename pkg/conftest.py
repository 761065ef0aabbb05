"""
Shared fixtures for the heavy-tail eigenvalue lab tests.
"""

import numpy as np
import pytest
from loguru import logger

from app.models.schemas import NoiseFamily, TailModel


@pytest.fixture(autouse=True)
def _quiet_logs():
    logger.remove()
    yield


@pytest.fixture
def rng():
    """Fresh seeded stream per test."""
    return np.random.default_rng(20240611)


@pytest.fixture
def pareto_1():
    return TailModel(alpha=1.0, family=NoiseFamily.EXACT_PARETO)


@pytest.fixture
def sym_pareto_2():
    return TailModel(alpha=2.0, family=NoiseFamily.SYMMETRIC_PARETO, center_mean=True)


@pytest.fixture
def student_3():
    return TailModel(alpha=3.0, family=NoiseFamily.STUDENT_T, center_mean=True)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path
