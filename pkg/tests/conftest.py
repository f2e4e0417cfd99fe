import numpy as np
import pytest

from fairrank.data import SyntheticConfig, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def biased_data():
    """Synthetic data whose protected group has inflated relevance."""
    return generate_synthetic(SyntheticConfig(
        n_queries=120, items_per_query=8, latent_dim=3, duplicate_prob=0.2,
        protected_rate=0.3, group_bias=1.5, seed=3,
    ))
