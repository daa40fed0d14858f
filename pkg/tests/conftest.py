import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from offres.trajectory import generate_cones, refine_dcf_pipemenon

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm((a - b).ravel()) / np.linalg.norm(b.ravel()))


@pytest.fixture(scope="session")
def traj16():
    """Dense 16^3 cones trajectory with the analytic dcf."""
    return generate_cones(16, 16, 32, 1.18e-3, 2.0, 16)


@pytest.fixture(scope="session")
def traj16_dense():
    return generate_cones(16, 16, 48, 1.18e-3, 2.0, 16)


@pytest.fixture(scope="session")
def traj32():
    """32^3 trajectory with Pipe-Menon refined dcf (pipeline default)."""
    return refine_dcf_pipemenon(generate_cones(32, 48, 64, 1.18e-3, 2.0, 32), 10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_image(shape, seed, sigma=1.5):
    from scipy.ndimage import gaussian_filter

    r = np.random.default_rng(seed)
    re = gaussian_filter(r.standard_normal(shape), sigma, mode="wrap")
    im = gaussian_filter(r.standard_normal(shape), sigma, mode="wrap")
    return re + 1j * im
