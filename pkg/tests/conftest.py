import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lesionloop.volumes import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def phantom_with_artifacts():
    """One deterministic phantom whose initial segmentation has spurious
    blobs (artifacts) alongside real lesions."""
    spec = PhantomSpec(n_lesions=2, n_artifacts=2)
    return generate_phantom(41, spec)


@pytest.fixture(scope="session")
def clean_phantom():
    spec = PhantomSpec(n_lesions=1, n_artifacts=0)
    return generate_phantom(11, spec)


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)
