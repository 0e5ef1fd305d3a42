import numpy as np
import pytest

from mvgrad.measure import EmpiricalMeasure
from mvgrad.scenarios import build_family


def brownian_model(d=1, sigma=1.0):
    return build_family("affine", d=d, a=0.0, kappa=0.0, sigma=sigma)


def ou_model(a=1.0, d=1, sigma=1.0):
    return build_family("affine", d=d, a=a, kappa=0.0, sigma=sigma)


def mfou_model(a=1.0, kappa=0.5, d=1, sigma=1.0):
    return build_family("affine", d=d, a=a, kappa=kappa, sigma=sigma)


def gaussian_cloud(n, d=1, mean=0.0, std=1.0, seed=0):
    rng = np.random.default_rng(seed)
    return EmpiricalMeasure(mean + std * rng.standard_normal((n, d)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
