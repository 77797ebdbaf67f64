import numpy as np
import pytest

from ltretrain import analysis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def benchmarks():
    """The five-seed synthetic benchmark, each with its CE-pretrained head."""
    return {seed: analysis.benchmark(seed) for seed in analysis.BENCHMARK_SEEDS}
