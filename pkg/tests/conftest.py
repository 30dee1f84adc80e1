import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def three_blob_data():
    """Three well separated Gaussian blobs (n=105, p=2) with known labels."""
    rng = np.random.default_rng(99)
    blocks = [
        rng.normal((0.0, 0.0), 0.8, (40, 2)),
        rng.normal((9.0, 0.0), 1.0, (35, 2)),
        rng.normal((0.0, 9.0), 0.9, (30, 2)),
    ]
    labels = np.repeat([0, 1, 2], [40, 35, 30])
    return np.vstack(blocks), labels
