import numpy as np
import pytest

from risloc.codebooks import random_codebook
from risloc.geometry import build_geometry
from risloc.signal import SystemConfig


@pytest.fixture(scope="session")
def small_cfg():
    return SystemConfig(subcarriers=64, transmissions=16)


@pytest.fixture(scope="session")
def small_geo(small_cfg):
    lam = small_cfg.wavelength
    return build_geometry(np.zeros(3), np.eye(3), 16, lam / 4, lam)


@pytest.fixture(scope="session")
def desk_cfg():
    return SystemConfig(subcarriers=256, transmissions=64)


@pytest.fixture(scope="session")
def desk_geo(desk_cfg):
    lam = desk_cfg.wavelength
    return build_geometry(np.zeros(3), np.eye(3), 32, lam / 4, lam)


@pytest.fixture
def small_schedule(small_cfg, small_geo):
    return random_codebook(small_geo.num_elements, small_cfg.transmissions // 2, 11, small_geo.fingerprint())


def diag_point(d):
    return np.full(3, d / np.sqrt(3))
