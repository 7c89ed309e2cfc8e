import numpy as np
import pytest
import torch

from reltemp.ingest import MetricMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def small_matrix(n=60, m=3, seed=0, labels=True):
    r = np.random.default_rng(seed)
    values = r.normal(size=(n, m)).cumsum(axis=0)
    lab = None
    if labels:
        lab = np.zeros(n, dtype=np.int8)
        lab[n // 2 : n // 2 + 5] = 1
    return MetricMatrix(values, [f"m{j}" for j in range(m)], lab)


@pytest.fixture
def matrix():
    return small_matrix()
