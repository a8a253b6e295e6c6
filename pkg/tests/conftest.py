import numpy as np
import pytest

from subspace_recovery.linalg import haar_basis
from subspace_recovery.schemas import Basis


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20241018)


@pytest.fixture
def plane() -> Basis:
    """span{e1, e2} in R^4."""
    return Basis(entries=np.eye(4)[:, :2])


def random_symmetric(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.standard_normal((d, d))
    return (g + g.T) / 2.0


def random_basis_pair(rng: np.random.Generator, d: int, k: int) -> tuple:
    return haar_basis(d, k, rng), haar_basis(d, k, rng)


def brute_pair_moment(block: np.ndarray) -> np.ndarray:
    """Literal double loop over ordered pairs j1 != j2."""
    m, d = block.shape
    total = np.zeros((d, d))
    for j1 in range(m):
        for j2 in range(m):
            if j1 != j2:
                total += np.outer(block[j1], block[j2])
    return total / (m * (m - 1))
