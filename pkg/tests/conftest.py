import numpy as np
import pytest

from treepark.model import ArrivalFamily, Model, binary_offspring, deterministic_law, geometric_poisson, poisson_law


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sub():
    return geometric_poisson(0.325)


@pytest.fixture
def sup():
    return geometric_poisson(0.5)


@pytest.fixture
def empty_model():
    # binary offspring, no cars at all
    return Model(binary_offspring(), ArrivalFamily.uniform(deterministic_law(0)))


@pytest.fixture
def binary_sub():
    return Model(binary_offspring(), ArrivalFamily.uniform(poisson_law(0.2)))
