import pytest

from nas import NasConfig, train


@pytest.fixture(scope="session")
def pruned_result():
    """One short high-pressure run shared by the export and CLI tests."""
    return train(NasConfig(lam=1e-3, seed=0, epochs=2, steps_per_epoch=8, batch=8))
