import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risloc.codebooks import random_codebook
from risloc.geometry import build_geometry, ris_response
from risloc.signal import (DomainError, GainProfile, PathSet, ShapeError, SystemConfig,
                           delay_steering, delay_steering_derivative, generate_multipath,
                           geometric_paths, los_component, multipath_component, path_loss,
                           synthesize_frame)

from conftest import diag_point


def test_reference_link_budget():
    cfg = SystemConfig()
    assert cfg.wavelength == pytest.approx(3e8 / 28e9)
    # 23 dBm spread over N * delta_f
    assert cfg.symbol_energy == pytest.approx(10**-0.7 / (3000 * 120e3), rel=1e-12)
    # -174 dBm/Hz + 3 dB
    assert cfg.noise_variance == pytest.approx(10 ** (-20.1), rel=1e-12)
    assert cfg.max_unambiguous_delay == pytest.approx(1 / 120e3)


def test_odd_t_rejected():
    with pytest.raises(ShapeError, match="T must be even"):
        SystemConfig(transmissions=99)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 5e-6))
def test_delay_steering_derivative(tau):
    h = 1e-14
    fd = (delay_steering(tau + h, 64, 120e3) - delay_steering(tau - h, 64, 120e3)) / (2 * h)
    np.testing.assert_allclose(delay_steering_derivative(tau, 64, 120e3), fd, rtol=1e-5, atol=1e-3)


def test_path_loss(small_cfg, small_geo):
    lam = small_cfg.wavelength
    p = np.array([0.0, 0.0, 2.0])
    assert path_loss(small_geo, p, lam) == pytest.approx(lam**2 / (16 * np.pi**1.5 * 4))
    p = diag_point(2.0)
    assert path_loss(small_geo, p, lam) == pytest.approx(lam**2 / (16 * np.pi**1.5 * 4) / np.sqrt(3))
    assert path_loss(small_geo, np.array([2.0, 0, 0]), lam) == 0.0
    with pytest.raises(DomainError):
        path_loss(small_geo, np.array([0, 0, -1.0]), lam)


def test_multipath_draws_respect_interval():
    gains, delays = generate_multipath(3, 1000, (1e-7, 4e-7), GainProfile(2.0, -3.0))
    assert delays.min() >= 1e-7 and delays.max() <= 4e-7
    # E|g|^2 = 2 * 10^-0.3; 1000 draws give ~3% standard error
    assert np.mean(np.abs(gains) ** 2) == pytest.approx(2 * 10**-0.3, rel=0.15)
    g2, d2 = generate_multipath(3, 1000, (1e-7, 4e-7), GainProfile(2.0, -3.0))
    np.testing.assert_array_equal(gains, g2)
    with pytest.raises(ValueError):
        generate_multipath(0, 2, (2e-7, 1e-7), GainProfile(1.0))


def test_noiseless_frame_is_model(small_cfg, small_geo, small_schedule):
    ue = diag_point(3.0)
    paths = geometric_paths(small_cfg, small_geo, ue, 0.4, [1e-7 + 2e-7j], [3e-7])
    fr = synthesize_frame(small_cfg, small_geo, ue, small_schedule, paths)
    assert fr.samples.shape == (small_cfg.subcarriers, small_cfg.transmissions)
    assert fr.noiseless
    W = small_schedule.expanded
    expected = los_component(small_cfg, small_geo, ue, W, paths.los_gain, paths.los_delay)
    expected += multipath_component(small_cfg, paths)[:, None]
    np.testing.assert_allclose(fr.samples, expected, rtol=0, atol=1e-25)
    # first column by hand
    b = ris_response(small_geo, ue, small_cfg.wavelength).b
    d = delay_steering(2 * 3.0 / 3e8, small_cfg.subcarriers, small_cfg.subcarrier_spacing_hz)
    col = np.sqrt(small_cfg.symbol_energy) * (paths.los_gain * d * (b @ W[:, 0])
                                              + paths.nlos_gains[0] * delay_steering(3e-7, 64, 120e3))
    np.testing.assert_allclose(fr.samples[:, 0], col, rtol=1e-10, atol=0)


def test_noise_statistics(small_cfg, small_geo, small_schedule):
    ue = diag_point(3.0)
    paths = PathSet(los_gain=0.0, los_delay=2e-8)
    fr = synthesize_frame(small_cfg, small_geo, ue, small_schedule, paths, noise_seed=5)
    n = fr.samples.ravel()
    assert np.mean(np.abs(n) ** 2) == pytest.approx(small_cfg.noise_variance, rel=0.1)
    assert abs(np.mean(n**2)) < 0.1 * small_cfg.noise_variance  # circular
    again = synthesize_frame(small_cfg, small_geo, ue, small_schedule, paths, noise_seed=5)
    np.testing.assert_array_equal(fr.samples, again.samples)


def test_shape_mismatch(small_cfg, small_geo):
    ue = diag_point(3.0)
    paths = geometric_paths(small_cfg, small_geo, ue)
    wrong_t = random_codebook(small_geo.num_elements, 4, 0)
    with pytest.raises(ShapeError):
        synthesize_frame(small_cfg, small_geo, ue, wrong_t, paths)
    wrong_m = random_codebook(9, small_cfg.transmissions // 2, 0)
    with pytest.raises(ShapeError):
        synthesize_frame(small_cfg, small_geo, ue, wrong_m, paths)


def test_behind_surface(small_cfg, small_geo):
    with pytest.raises(DomainError):
        geometric_paths(small_cfg, small_geo, np.array([1.0, 1.0, -1.0]))
