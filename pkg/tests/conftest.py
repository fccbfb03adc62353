import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    from polarmat.materials import generate_dataset

    return generate_dataset(materials_per_category=4, samples_per_material=3, seed=7)


@pytest.fixture(scope="session")
def default_dataset():
    from polarmat.materials import generate_dataset

    return generate_dataset(seed=1)
