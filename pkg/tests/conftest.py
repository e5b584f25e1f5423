import numpy as np
import pytest

from unilvc.runtime import limit_blas_threads

limit_blas_threads()


@pytest.fixture(scope="session")
def default_model():
    """One seeded model shared across tests that only need any valid model."""
    from unilvc import model
    return model.from_seed(2024)


@pytest.fixture(scope="session")
def small_clip():
    rng = np.random.default_rng(314159)
    return rng.integers(0, 256, (5, 64, 64, 3), dtype=np.uint8)
