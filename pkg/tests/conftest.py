import numpy as np
import pytest
from hypothesis import settings

from phimart import ModelParams, builtin_phi
from phimart.model import builtin_operator

settings.register_profile("det", derandomize=True, max_examples=40, deadline=None)
settings.load_profile("det")


@pytest.fixture(scope="session")
def rotation3():
    return builtin_operator("rotation3")


@pytest.fixture(scope="session")
def signed_square():
    return builtin_phi("signed-square")


@pytest.fixture(scope="session")
def example_instance():
    return ModelParams.for_inequality(3, 1, 2.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240809)
