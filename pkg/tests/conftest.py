import numpy as np
import pytest

from attnclust.mixtures import make_orthonormal_centroids


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def centroids5():
    return make_orthonormal_centroids(5, 2)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)
