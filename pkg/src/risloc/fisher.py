"""
Fisher information, equivalent FIM for position, and the position error bound.

Unknowns are ordered as

    eta = [rho0, phi0, p_u (3), rho_1, phi_1, tau_1, ..., rho_L, phi_L, tau_L]

and the noise-free mean of transmission t (without the sqrt(Es) factor) is

    mu_t = beta0 d(tau0) b(p_ur)^T w_t + sum_l beta_l d(tau_l).

Two independent routes to the LOS information are provided: a generic
assembly from analytic derivatives (:func:`fim`) and the block closed form
(:func:`fim_los_closed_form`); :func:`fim_finite_difference` is a purely
numerical oracle built on :func:`mean_signal`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RisGeometry, far_field_response, ris_response
from .signal import SystemConfig, delay_steering, delay_steering_derivative

ILL_CONDITIONED = 1e8
POSITION = slice(2, 5)


class DegenerateFimError(np.linalg.LinAlgError):
    """The nuisance block of the FIM cannot be inverted."""


@dataclass(frozen=True)
class ParameterVector:
    """LOS parameters (rho0, phi0, p_u) followed by (rho, phi, tau) per NLOS path."""

    rho0: float
    phi0: float
    p_u: np.ndarray
    nlos_rho: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nlos_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nlos_tau: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def from_paths(cls, paths, ue_position) -> "ParameterVector":
        g = np.asarray(paths.nlos_gains, complex)
        return cls(rho0=float(abs(paths.los_gain)), phi0=float(np.angle(paths.los_gain)),
                   p_u=np.asarray(ue_position, float),
                   nlos_rho=np.abs(g), nlos_phi=np.angle(g),
                   nlos_tau=np.asarray(paths.nlos_delays, float))

    @classmethod
    def from_array(cls, eta) -> "ParameterVector":
        eta = np.asarray(eta, dtype=float)
        if (len(eta) - 5) % 3:
            raise ValueError(f"parameter vector length {len(eta)} is not 5 + 3L")
        tail = eta[5:].reshape(-1, 3)
        return cls(eta[0], eta[1], eta[2:5].copy(), tail[:, 0].copy(), tail[:, 1].copy(), tail[:, 2].copy())

    @property
    def num_nlos(self) -> int:
        return len(self.nlos_rho)

    @property
    def size(self) -> int:
        return 5 + 3 * self.num_nlos

    @property
    def beta0(self) -> complex:
        return self.rho0 * np.exp(1j * self.phi0)

    def as_array(self) -> np.ndarray:
        tail = np.stack([self.nlos_rho, self.nlos_phi, self.nlos_tau], axis=1).ravel()
        return np.concatenate([[self.rho0, self.phi0], self.p_u, tail])


@dataclass(frozen=True, eq=False)
class LosTerms:
    """
    Building blocks of the closed-form LOS FIM.

    G = sum_t |b^T w_t|^2, z (3,), H (3, 3) and U (3, 3) as in the block
    expression; ``C = sum_t conj(w_t) w_t^T`` is only materialised on request
    because it is M x M. ``bCB = b^H C B_dot`` is kept in factored form.
    """

    G: float
    z: np.ndarray
    H: np.ndarray
    U: np.ndarray
    bCB: np.ndarray
    BCB: np.ndarray
    u_ur: np.ndarray
    delay_norm2: float
    delay_cross: complex
    N: int
    rho0: float
    C: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class FimReport:
    fim: np.ndarray
    efim: np.ndarray
    peb: float
    condition_number: float
    ill_conditioned: bool
    intermediates: LosTerms | None = None


def _profiles(schedule) -> np.ndarray:
    """Expanded M x T profile matrix from a PhaseSchedule or a raw array."""
    if isinstance(schedule, np.ndarray):
        return schedule
    return schedule.expanded


def _prefactor(config: SystemConfig) -> float:
    return 2.0 * config.symbol_energy / config.noise_variance


def mean_signal(config: SystemConfig, geometry: RisGeometry, schedule,
                params: ParameterVector) -> np.ndarray:
    """Noise-free mu_t for every transmission, size (T, N)."""
    W = _profiles(schedule)
    p_ur = params.p_u - geometry.center
    st = ris_response(geometry, p_ur, config.wavelength)
    tau0 = 2 * st.range / config.speed_of_light
    N, df = config.subcarriers, config.subcarrier_spacing_hz
    mu = params.beta0 * np.outer(st.b @ W, delay_steering(tau0, N, df))
    for rho, phi, tau in zip(params.nlos_rho, params.nlos_phi, params.nlos_tau):
        mu += rho * np.exp(1j * phi) * delay_steering(tau, N, df)[None, :]
    return mu


def mean_jacobian(config: SystemConfig, geometry: RisGeometry, schedule,
                  params: ParameterVector) -> np.ndarray:
    """
    Analytic derivatives of mu_t with respect to every entry of eta.

    Returns
    -------
    ndarray, size=(T, N, 5 + 3L), complex
    """
    W = _profiles(schedule)
    N, df, c = config.subcarriers, config.subcarrier_spacing_hz, config.speed_of_light
    st = ris_response(geometry, params.p_u - geometry.center, config.wavelength)
    tau0 = 2 * st.range / c
    d = delay_steering(tau0, N, df)
    d_dot = delay_steering_derivative(tau0, N, df)
    beta0 = params.beta0
    s = st.b @ W                      # (T,)
    v = W.T @ st.b_dot                # (T, 3): w_t^T B_dot

    T = W.shape[1]
    jac = np.empty((T, N, params.size), dtype=complex)
    jac[:, :, 0] = np.exp(1j * params.phi0) * s[:, None] * d[None, :]
    jac[:, :, 1] = 1j * beta0 * s[:, None] * d[None, :]
    jac[:, :, 2:5] = ((2 * beta0 / c) * s[:, None, None] * d_dot[None, :, None] * st.u_ur[None, None, :]
                      + beta0 * d[None, :, None] * v[:, None, :])
    for l, (rho, phi, tau) in enumerate(zip(params.nlos_rho, params.nlos_phi, params.nlos_tau)):
        dl = delay_steering(tau, N, df)
        k = 5 + 3 * l
        jac[:, :, k] = np.exp(1j * phi) * dl
        jac[:, :, k + 1] = 1j * rho * np.exp(1j * phi) * dl
        jac[:, :, k + 2] = rho * np.exp(1j * phi) * delay_steering_derivative(tau, N, df)
    return jac


def _information(config: SystemConfig, jac: np.ndarray) -> np.ndarray:
    J = np.einsum("tni,tnj->ij", jac.conj(), jac).real
    J = 0.5 * (J + J.T)
    return _prefactor(config) * J


def fim_matrix(config: SystemConfig, geometry: RisGeometry, schedule,
               params: ParameterVector) -> np.ndarray:
    """Full (5+3L) x (5+3L) FIM from the analytic Jacobian."""
    return _information(config, mean_jacobian(config, geometry, schedule, params))


def fim(config: SystemConfig, geometry: RisGeometry, schedule,
        params: ParameterVector) -> FimReport:
    """Full FIM with its position EFIM and PEB."""
    J = fim_matrix(config, geometry, schedule, params)
    return _report(J, efim_position(J))


def fim_finite_difference(config: SystemConfig, geometry: RisGeometry, schedule,
                          params: ParameterVector, position_step: float = 1e-6,
                          delay_step: float = 1e-15, gain_step: float = 1e-6) -> np.ndarray:
    """
    FIM from central differences of :func:`mean_signal`.

    Gain steps are relative to rho (the mean is linear in rho, so the
    difference is exact up to roundoff for any step).
    """
    eta = params.as_array()
    steps = np.empty_like(eta)
    steps[0] = gain_step * max(abs(eta[0]), 1e-300)
    steps[1] = gain_step
    steps[2:5] = position_step
    for l in range(params.num_nlos):
        k = 5 + 3 * l
        steps[k] = gain_step * max(abs(eta[k]), 1e-300)
        steps[k + 1] = gain_step
        steps[k + 2] = delay_step
    T = _profiles(schedule).shape[1]
    jac = np.empty((T, config.subcarriers, len(eta)), dtype=complex)
    for i, h in enumerate(steps):
        e = np.zeros_like(eta)
        e[i] = h
        plus = mean_signal(config, geometry, schedule, ParameterVector.from_array(eta + e))
        minus = mean_signal(config, geometry, schedule, ParameterVector.from_array(eta - e))
        jac[:, :, i] = (plus - minus) / (2 * h)
    return _information(config, jac)


def los_terms(config: SystemConfig, geometry: RisGeometry, schedule, params: ParameterVector,
              far_field: bool = False, explicit_c: bool = False) -> LosTerms:
    """
    G, z, H, U of the LOS block. With ``far_field`` the plane-wave
    response and its derivative replace the exact ones.
    """
    W = _profiles(schedule)
    N, df, c = config.subcarriers, config.subcarrier_spacing_hz, config.speed_of_light
    p_ur = params.p_u - geometry.center
    st = ris_response(geometry, p_ur, config.wavelength)
    if far_field:
        st = far_field_response(geometry, st.u_ur, config.wavelength, st.range)
    tau0 = 2 * st.range / c
    d = delay_steering(tau0, N, df)
    d_dot = delay_steering_derivative(tau0, N, df)
    rho = abs(params.rho0)
    u = st.u_ur

    s = W.T @ st.b
    V = W.T @ st.b_dot
    G = float(np.sum(np.abs(s) ** 2))
    Cmat = None
    if explicit_c:
        Cmat = W.conj() @ W.T
        bCB = st.b.conj() @ Cmat @ st.b_dot
        BCB = st.b_dot.conj().T @ Cmat @ st.b_dot
    else:
        bCB = s.conj() @ V
        BCB = V.conj().T @ V
    delay_cross = complex(np.vdot(d, d_dot))          # d^H d_dot
    delay_norm2 = float(np.vdot(d_dot, d_dot).real)
    z = (2 * rho / c) * G * delay_cross * u + N * rho * bCB
    U = np.conj(delay_cross) * np.outer(u, bCB)        # (d_dot^H d) u b^H C B_dot
    H = ((4 * rho**2 / c**2) * G * delay_norm2 * np.outer(u, u)
         + rho**2 * N * BCB.real
         + (2 * rho**2 / c) * (U + U.conj().T).real)
    return LosTerms(G=G, z=z, H=H, U=U, bCB=bCB, BCB=BCB, u_ur=u, delay_norm2=delay_norm2,
                    delay_cross=delay_cross, N=N, rho0=rho, C=Cmat)


def assemble_los(config: SystemConfig, terms: LosTerms) -> np.ndarray:
    N, G, rho, z = terms.N, terms.G, terms.rho0, terms.z
    J = np.zeros((5, 5))
    J[0, 0] = N * G
    J[1, 1] = N * rho**2 * G
    J[0, 2:] = J[2:, 0] = z.real
    J[1, 2:] = J[2:, 1] = rho * z.imag
    J[2:, 2:] = 0.5 * (terms.H + terms.H.T)
    return _prefactor(config) * J


def fim_los_closed_form(config: SystemConfig, geometry: RisGeometry, schedule,
                        params: ParameterVector, far_field: bool = False,
                        explicit_c: bool = False) -> np.ndarray:
    """5 x 5 LOS FIM from the G/z/H block expression."""
    return assemble_los(config, los_terms(config, geometry, schedule, params, far_field, explicit_c))


def efim_closed_form(config: SystemConfig, terms: LosTerms) -> np.ndarray:
    """
    Position EFIM written as a delay term along u_ur plus an angular term
    built from B_dot, with the profile correlation matrix C in the role of F.
    """
    pre = config.symbol_energy / config.noise_variance
    c = config.speed_of_light
    rho2, N, G, u = terms.rho0**2, terms.N, terms.G, terms.u_ur
    radial = (8 * rho2 * pre * G / c**2) * (terms.delay_norm2 - abs(terms.delay_cross) ** 2 / N)
    w = terms.bCB
    angular = 2 * pre * rho2 * N * (terms.BCB.real - np.outer(w.conj(), w).real / G)
    E = radial * np.outer(u, u) + angular
    return 0.5 * (E + E.T)


def radial_information(config: SystemConfig, terms: LosTerms) -> float:
    """Coefficient of u_ur u_ur^T contributed by delay estimation."""
    pre = config.symbol_energy / config.noise_variance
    return float((8 * terms.rho0**2 * pre * terms.G / config.speed_of_light**2)
                 * (terms.delay_norm2 - abs(terms.delay_cross) ** 2 / terms.N))


def efim_position(J: np.ndarray) -> np.ndarray:
    """
    Schur complement of ``J`` onto the position coordinates (indices 2:5).

    Works for the 5 x 5 LOS block or the full matrix. The nuisance block is
    equilibrated before solving because its entries span many decades.

    Raises
    ------
    DegenerateFimError
        If the nuisance block is singular.
    """
    J = np.asarray(J, dtype=float)
    idx = np.arange(J.shape[0])
    pos = idx[POSITION]
    nui = np.setdiff1d(idx, pos)
    Jnn = J[np.ix_(nui, nui)]
    Jnp = J[np.ix_(nui, pos)]
    diag = np.diag(Jnn)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        raise DegenerateFimError("nuisance block has a non-positive diagonal")
    scale = 1.0 / np.sqrt(diag)
    A = Jnn * np.outer(scale, scale)
    if np.linalg.cond(A) > 1e14:
        raise DegenerateFimError("nuisance block is singular")
    X = np.linalg.solve(A, Jnp * scale[:, None]) * scale[:, None]
    E = J[np.ix_(pos, pos)] - Jnp.T @ X
    return 0.5 * (E + E.T)


def condition_number(efim: np.ndarray) -> float:
    w = np.linalg.eigvalsh(efim)
    if w[0] <= 0:
        return np.inf
    return float(w[-1] / w[0])


def peb(efim: np.ndarray) -> float:
    """sqrt(trace(efim^-1)); infinity if efim is ill-conditioned."""
    if not condition_number(efim) < ILL_CONDITIONED:
        return np.inf
    return float(np.sqrt(np.trace(np.linalg.inv(efim))))


def _report(J, E, terms=None) -> FimReport:
    cond = condition_number(E)
    return FimReport(fim=J, efim=E, peb=peb(E), condition_number=cond,
                     ill_conditioned=not cond < ILL_CONDITIONED, intermediates=terms)


def position_bound(config: SystemConfig, geometry: RisGeometry, schedule,
                   params: ParameterVector, far_field: bool = False) -> FimReport:
    """
    PEB from the LOS block only; NLOS paths decouple for zero-sum schedules.
    """
    terms = los_terms(config, geometry, schedule, params, far_field=far_field)
    J = assemble_los(config, terms)
    return _report(J, efim_position(J), terms)
