import numpy as np
import pytest

from smclab import section7_model, weight_profile


@pytest.fixture(scope="session")
def model():
    return section7_model()


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def random_profile(rng, m_lo=4, m_hi=50, g_lo=1.0, g_hi=np.e):
    m = int(rng.integers(m_lo, m_hi + 1))
    g = rng.uniform(g_lo, g_hi, m)
    return weight_profile(g)
