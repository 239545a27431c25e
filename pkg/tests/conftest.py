import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_image(rng):
    """Factory for random 16-divisible RGB images: make_image(blocks_y, blocks_x)."""

    def _make(blocks_y=3, blocks_x=4, seed=None):
        gen = rng if seed is None else np.random.default_rng(seed)
        return gen.integers(
            0, 256, size=(blocks_y * 16, blocks_x * 16, 3), dtype=np.uint8
        )

    return _make
