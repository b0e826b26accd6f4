import numpy as np
import pytest

from tabattack.benchmark import build_benchmark
from tabattack.constraints import parse_constraints
from tabattack.features import FeatureSpec


@pytest.fixture(scope="session")
def bench():
    return build_benchmark(0)


@pytest.fixture
def cont_specs():
    """Four unconstrained continuous features f1..f4 on [-100, 100]."""
    return [FeatureSpec(f"f{i}", "continuous", True, -100.0, 100.0) for i in range(1, 5)]


@pytest.fixture
def omega_of(cont_specs):
    def make(text, tolerance=1e-6):
        return parse_constraints(text, cont_specs, tolerance)

    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
