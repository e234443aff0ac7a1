import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def proportion_se(p: float, n: int) -> float:
    return (max(p * (1.0 - p), 1e-12) / n) ** 0.5
