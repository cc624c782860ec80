import os

import pytest
from hypothesis import settings

from eswish.data import synthetic_dataset

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_data():
    """A quick 10-class synthetic set with 784 features, like MNIST but tiny."""
    return synthetic_dataset(0, 80, 10, 784)
