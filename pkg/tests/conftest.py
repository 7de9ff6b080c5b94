import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


def random_distributions(rng, n, L=8, sparsity=0.0):
    p = rng.dirichlet(np.ones(L), size=n)
    if sparsity:
        mask = rng.random((n, L)) < sparsity
        mask[np.arange(n), rng.integers(0, L, n)] = False
        p = np.where(mask, 0.0, p)
        p /= p.sum(1, keepdims=True)
    return p
