import numpy as np
import pytest

from hfsad import synthspeech
from hfsad.markers import build_marker_set


@pytest.fixture(scope="session")
def source_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sources")
    synthspeech.write_source_dir(d, num_files=8, duration_s=20.0, seed=11)
    return d


@pytest.fixture(scope="session")
def sources(source_dir):
    return [(str(p), 20.0) for p in sorted(source_dir.glob("*.wav"))]


@pytest.fixture(scope="session")
def marker_set():
    return build_marker_set(4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

