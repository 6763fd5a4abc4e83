import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from d2former import ctensor as ct
from d2former.ctensor import ComplexTensor

settings.register_profile("repo", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def cz(rng, shape, grad=False, scale=1.0):
    return ComplexTensor(scale * rng.standard_normal(shape), scale * rng.standard_normal(shape),
                         requires_grad=grad)


@pytest.fixture
def f64():
    with ct.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
