import os
import tempfile

os.environ.setdefault("LOG_DIR", tempfile.mkdtemp(prefix="gsmflow-logs-"))

import numpy as np
import pytest

from app.models import BenchmarkSpec
from app.utils.benchmark import generate_benchmark
from app.utils.data_io import save_dataset


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run end-to-end acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end acceptance run (enable with --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return BenchmarkSpec(n_seen=4, n_unseen=3, d=6, a=5, samples_per_class=40, seed=7)


@pytest.fixture
def small_benchmark(small_spec):
    return generate_benchmark(small_spec)


@pytest.fixture
def data_dir(tmp_path, small_benchmark):
    dataset, truth = small_benchmark
    root = tmp_path / "data"
    save_dataset(dataset, root, truth)
    return root
