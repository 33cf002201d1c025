"""
Monostatic OFDM observation model.

Column t of a frame is

    y_t = sqrt(Es) beta0 d(tau0) b(p_ur)^T w_t + sqrt(Es) sum_l beta_l d(tau_l) + n_t

with n_t circularly-symmetric white Gaussian noise of variance sigma_n^2 per
sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RisGeometry, ris_response

SPEED_OF_LIGHT = 3e8  # m/s, value used for all reference scenarios


class ShapeError(ValueError):
    """Raised when frame, schedule and configuration dimensions disagree."""


class DomainError(ValueError):
    """Raised for UE positions behind the RIS."""


@dataclass(frozen=True)
class SystemConfig:
    """
    Carrier, OFDM and link-budget parameters.

    ``tx_power_dbm`` is the total transmit power N * delta_f * Es, and the
    per-subcarrier noise variance is n_f * N_0 in joules, so that
    ``symbol_energy / noise_variance`` is the per-subcarrier SNR.
    """

    carrier_hz: float = 28e9
    subcarriers: int = 3000
    subcarrier_spacing_hz: float = 120e3
    transmissions: int = 100
    tx_power_dbm: float = 23.0
    noise_psd_dbm_hz: float = -174.0
    noise_figure_db: float = 3.0
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.transmissions % 2:
            raise ShapeError(f"T must be even, got {self.transmissions}")
        if self.subcarriers < 1:
            raise ShapeError("N must be positive")

    @property
    def wavelength(self) -> float:
        return self.speed_of_light / self.carrier_hz

    @property
    def symbol_energy(self) -> float:
        return 10 ** ((self.tx_power_dbm - 30) / 10) / (self.subcarriers * self.subcarrier_spacing_hz)

    @property
    def noise_variance(self) -> float:
        return 10 ** ((self.noise_psd_dbm_hz + self.noise_figure_db - 30) / 10)

    @property
    def max_unambiguous_delay(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz


@dataclass(frozen=True)
class PathSet:
    """LOS-via-RIS gain/delay plus the uncontrolled multipath components."""

    los_gain: complex
    los_delay: float
    nlos_gains: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))
    nlos_delays: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def num_nlos(self) -> int:
        return len(self.nlos_gains)

    @property
    def nlos(self) -> list[tuple[complex, float]]:
        return list(zip(self.nlos_gains.tolist(), self.nlos_delays.tolist()))


@dataclass(frozen=True, eq=False)
class ReceivedFrame:
    """
    N x T observation with the ground truth that generated it.

    ``noise_variance`` is the per-sample variance the noise was drawn with
    (the configured value even when ``noiseless``).
    """

    samples: np.ndarray
    paths: PathSet
    ue_position: np.ndarray
    schedule_id: str
    noise_variance: float
    noiseless: bool = False


def delay_steering(tau: float, n: int, spacing_hz: float) -> np.ndarray:
    """d(tau) with entries exp(-j 2pi tau k df), k = 0..n-1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n)
    return np.exp(-2j * np.pi * tau * spacing_hz * k)


def delay_steering_derivative(tau: float, n: int, spacing_hz: float) -> np.ndarray:
    """Derivative of :func:`delay_steering` with respect to tau."""
    k = np.arange(n)
    return -2j * np.pi * spacing_hz * k * delay_steering(tau, n, spacing_hz)


def los_delay(p_ur, speed_of_light: float = SPEED_OF_LIGHT) -> float:
    return 2.0 * float(np.linalg.norm(p_ur)) / speed_of_light


def path_loss(geometry: RisGeometry, p_ur, wavelength: float) -> float:
    """
    Magnitude of the RIS round-trip gain,
    lambda^2 cos(phi) / (16 pi^1.5 |p_ur|^2) with cos(phi) = u_ur . n_r.
    """
    p_ur = np.asarray(p_ur, dtype=float)
    r = np.linalg.norm(p_ur)
    if r == 0:
        raise DomainError("UE at the RIS centre")
    cos_phi = float(p_ur @ geometry.normal) / r
    if cos_phi < -1e-12:
        raise DomainError("UE behind the RIS surface")
    cos_phi = max(cos_phi, 0.0)
    return wavelength**2 * cos_phi / (16 * np.pi**1.5 * r**2)


@dataclass(frozen=True)
class GainProfile:
    """
    Multipath gain statistics. Each path has E|beta_l|^2 equal to
    ``reference_power * 10**(relative_power_db / 10)``.
    """

    reference_power: float
    relative_power_db: float = 0.0


def generate_multipath(rng_seed: int, count: int, delay_range: tuple[float, float],
                       gain_profile: GainProfile) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw ``count`` NLOS paths: delays uniform in ``delay_range``, gains
    circularly-symmetric complex Gaussian.

    Returns
    -------
    gains : ndarray, size=(count,), complex
    delays : ndarray, size=(count,)
    """
    lo, hi = delay_range
    if not 0 <= lo <= hi:
        raise ValueError(f"invalid delay range {delay_range}")
    rng = np.random.default_rng(rng_seed)
    delays = rng.uniform(lo, hi, size=count)
    power = gain_profile.reference_power * 10 ** (gain_profile.relative_power_db / 10)
    gains = np.sqrt(power / 2) * (rng.standard_normal(count) + 1j * rng.standard_normal(count))
    return gains, delays


def geometric_paths(config: SystemConfig, geometry: RisGeometry, ue_position,
                    phase: float = 0.0, nlos_gains=None, nlos_delays=None) -> PathSet:
    """PathSet whose LOS gain/delay follow from the UE position."""
    p_ur = np.asarray(ue_position, dtype=float) - geometry.center
    rho = path_loss(geometry, p_ur, config.wavelength)
    return PathSet(
        los_gain=rho * np.exp(1j * phase),
        los_delay=los_delay(p_ur, config.speed_of_light),
        nlos_gains=np.zeros(0, complex) if nlos_gains is None else np.asarray(nlos_gains, complex),
        nlos_delays=np.zeros(0) if nlos_delays is None else np.asarray(nlos_delays, float),
    )


def los_component(config: SystemConfig, geometry: RisGeometry, ue_position,
                  profiles: np.ndarray, los_gain: complex, tau: float) -> np.ndarray:
    """sqrt(Es) beta0 d(tau) b^T W for the columns of ``profiles`` (M x K)."""
    p_ur = np.asarray(ue_position, dtype=float) - geometry.center
    b = ris_response(geometry, p_ur, config.wavelength).b
    d = delay_steering(tau, config.subcarriers, config.subcarrier_spacing_hz)
    return np.sqrt(config.symbol_energy) * los_gain * np.outer(d, b @ profiles)


def multipath_component(config: SystemConfig, paths: PathSet) -> np.ndarray:
    """sqrt(Es) sum_l beta_l d(tau_l), size (N,)."""
    acc = np.zeros(config.subcarriers, complex)
    for g, tau in zip(paths.nlos_gains, paths.nlos_delays):
        acc += g * delay_steering(tau, config.subcarriers, config.subcarrier_spacing_hz)
    return np.sqrt(config.symbol_energy) * acc


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    return np.sqrt(variance / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_frame(config: SystemConfig, geometry: RisGeometry, ue_position, schedule,
                     paths: PathSet, noise_seed: int | None = None) -> ReceivedFrame:
    """
    Build the N x T observation for ``schedule`` (a PhaseSchedule).

    ``noise_seed=None`` produces a noiseless frame.
    """
    W = schedule.expanded
    if W.shape[1] != config.transmissions:
        raise ShapeError(
            f"schedule has {W.shape[1]} profiles, config expects T={config.transmissions}")
    if W.shape[0] != geometry.num_elements:
        raise ShapeError(
            f"schedule has {W.shape[0]} elements, RIS has {geometry.num_elements}")
    ue = np.asarray(ue_position, dtype=float).reshape(3)
    Y = los_component(config, geometry, ue, W, paths.los_gain, paths.los_delay)
    Y += multipath_component(config, paths)[:, None]
    if noise_seed is not None:
        Y += complex_noise(np.random.default_rng(noise_seed), Y.shape, config.noise_variance)
    return ReceivedFrame(samples=Y, paths=paths, ue_position=ue, schedule_id=schedule.key,
                         noise_variance=config.noise_variance, noiseless=noise_seed is None)
