# tests/conftest.py - shared fixtures
import numpy as np
import pytest

from services.permcore import LabeledDataset
from services.synthetic import generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset():
    """n0 = n1 = 3 subjects, v = 4 features."""
    values = np.array([
        [1.0, 2.0, 0.5, -1.0],
        [2.5, 1.0, 0.7, -0.2],
        [0.3, 3.0, 1.9, 0.4],
        [1.7, 0.2, 2.2, 1.1],
        [2.2, 1.4, 0.1, 0.9],
        [0.9, 2.6, 1.3, -0.6],
    ])
    return LabeledDataset(values=values, labels=np.array([0, 0, 0, 1, 1, 1]))


@pytest.fixture
def small_dataset():
    return generate_dataset(n_subjects=12, n_features=400, rank=3, noise_sd=1.0, seed=3)


@pytest.fixture
def ledger_path(tmp_path):
    return str(tmp_path / "runs.db")
