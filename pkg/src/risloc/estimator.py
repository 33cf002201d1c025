"""
Three-stage position estimator working on multipath-free observations.

1. coarse delay from the non-coherent sum of zero-padded IFFTs,
2. coarse position by maximising P(p) = |s(p) z^H|^2 / |s(p)|^2 over a
   grid of points on shells around the coarse range,
3. quasi-Newton minimisation of the concentrated least-squares cost
   sum_t |beta(p) zeta_t(p) - y_t|^2 with beta(p) in closed form.

Public functions take and return global UE positions; internally
everything is relative to the RIS centre.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .codebooks import PhaseSchedule, remove_multipath
from .geometry import RisGeometry, ris_response, round_trip_matrix
from .signal import SystemConfig, delay_steering, delay_steering_derivative


class NoSignalError(ValueError):
    """Raised when the observation carries no energy."""


class EmptyGridError(ValueError):
    """Raised when no candidate points satisfy the range-shell constraint."""


@dataclass(frozen=True)
class EstimatorConfig:
    """
    Attributes
    ----------
    ifft_oversampling : int
        N' / N for the coarse delay search.
    grid_pitch : float
        Direction spacing of the first grid level, in beamwidths
        (lambda / (2 * aperture) radians).
    refine_pitch : float
        Spacing of the local second-level grid, in beamwidths.
    refine_span : int
        Half-width of the local grid in points.
    shells : int
        Number of range shells spanning [r - eps, r + eps].
    range_tolerance : float or None
        eps in metres; None selects two delay bins plus one grid pitch.
    max_iterations, gradient_tolerance, step_tolerance
        Passed to the BFGS refinement.
    gain_rule : {"ls", "per_t_mean"}
        Closed-form gain used in the concentrated cost.
    """

    ifft_oversampling: int = 10
    grid_pitch: float = 0.7
    refine_pitch: float = 0.2
    refine_span: int = 4
    shells: int = 3
    range_tolerance: float | None = None
    max_iterations: int = 200
    gradient_tolerance: float = 1e-3
    step_tolerance: float = 1e-10
    gain_rule: str = "ls"

    def __post_init__(self):
        if self.ifft_oversampling < 1:
            raise ValueError("ifft_oversampling must be >= 1")
        if self.range_tolerance is not None and not self.range_tolerance > 0:
            raise ValueError("range_tolerance must be positive")
        if self.gain_rule not in ("ls", "per_t_mean"):
            raise ValueError(f"unknown gain rule {self.gain_rule!r}")


@dataclass
class EstimateReport:
    tau_hat: float
    coarse_position: np.ndarray
    refined_position: np.ndarray
    gain_hat: complex
    coarse_cost: float
    final_cost: float
    iterations: int
    refined: bool
    cost_trace: list = field(default_factory=list)
    message: str = ""
    error_m: float | None = None


# -- stage 1 ---------------------------------------------------------------

def coarse_delay(y_tilde: np.ndarray, config: SystemConfig, oversampling: int = 10) -> float:
    """
    Delay at the peak of sum_t |F y_t|^2 with F the N' x N IFFT matrix.
    """
    Y = np.asarray(y_tilde)
    N = Y.shape[0]
    n_prime = oversampling * N
    if n_prime < N:
        raise ValueError("N' must be at least N")
    if not np.any(Y):
        raise NoSignalError("observation is identically zero")
    spectrum = np.fft.ifft(Y, n=n_prime, axis=0)
    y_f = np.sum(np.abs(spectrum) ** 2, axis=1)
    return int(np.argmax(y_f)) / (n_prime * config.subcarrier_spacing_hz)


# -- stage 2 ---------------------------------------------------------------

@lru_cache(maxsize=8)
def _hemisphere(count: int) -> np.ndarray:
    """Fibonacci lattice of ``count`` unit vectors with local z > 0."""
    i = np.arange(count) + 0.5
    z = 1.0 - i / count
    phi = np.pi * (1.0 + 5**0.5) * i
    rxy = np.sqrt(1.0 - z * z)
    return np.stack([rxy * np.cos(phi), rxy * np.sin(phi), z], axis=1)


def beamwidth(geometry: RisGeometry, wavelength: float) -> float:
    """Angular distance from the round-trip beam peak to its first null [rad]."""
    return wavelength / (2 * geometry.aperture)


def direction_grid(geometry: RisGeometry, wavelength: float, pitch: float) -> np.ndarray:
    """Front-half-space unit vectors (global frame) spaced ~pitch beamwidths apart."""
    step = min(pitch * beamwidth(geometry, wavelength), 1.0)
    count = int(np.ceil(2 * np.pi / step**2))
    return _hemisphere(count) @ geometry.orientation.T


def _local_patch(u0: np.ndarray, step: float, span: int) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(u0[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u0, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u0, e1)
    offs = np.arange(-span, span + 1) * step
    a, b = np.meshgrid(offs, offs, indexing="ij")
    dirs = u0[None, :] + a.ravel()[:, None] * e1 + b.ravel()[:, None] * e2
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


class _LRU:
    def __init__(self, max_bytes: int):
        self.max_bytes = max_bytes
        self.nbytes = 0
        self.store: OrderedDict = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, key, compute):
        if key in self.store:
            self.store.move_to_end(key)
            self.hits += 1
            return self.store[key]
        self.misses += 1
        value = compute()
        self.store[key] = value
        self.nbytes += value.nbytes
        while self.nbytes > self.max_bytes and len(self.store) > 1:
            _, old = self.store.popitem(last=False)
            self.nbytes -= old.nbytes
        return value


class GridCache:
    """
    Memo for the coarse grid: shell responses b(p) keyed by (geometry,
    radius, grid size) and signatures s(p) = b(p)^T [w_1 .. w_{T/2}] keyed
    additionally by schedule. Coarse radii are quantised by the delay bin,
    so trials at the same point mostly hit both caches.
    """

    def __init__(self, max_bytes: int = 256 * 2**20):
        self.responses = _LRU(max_bytes)
        self.signatures = _LRU(max_bytes // 8)

    def shell_signatures(self, geometry, wavelength, dirs, radius, base, schedule_key=None):
        rkey = (geometry.fingerprint(), wavelength, round(float(radius), 9), len(dirs))

        def responses():
            return round_trip_matrix(geometry, dirs * radius, wavelength)

        def signatures():
            return self.responses.get(rkey, responses) @ base

        if schedule_key is None:
            return signatures()
        return self.signatures.get((schedule_key,) + rkey, signatures)


def _base_matrix(base) -> np.ndarray:
    return base.base if isinstance(base, PhaseSchedule) else np.asarray(base)


def _signatures(geometry, wavelength, points_rel, base, chunk=2048):
    out = np.empty((len(points_rel), base.shape[1]), dtype=complex)
    for i in range(0, len(points_rel), chunk):
        out[i:i + chunk] = round_trip_matrix(geometry, points_rel[i:i + chunk], wavelength) @ base
    return out


def _score(S: np.ndarray, z: np.ndarray) -> np.ndarray:
    num = np.abs(S @ z.conj()) ** 2
    den = np.einsum("ij,ij->i", S.real, S.real) + np.einsum("ij,ij->i", S.imag, S.imag)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def position_score(y_tilde, tau_hat, base, geometry, config, points) -> np.ndarray:
    """P(p) at global ``points`` (K x 3)."""
    d = delay_steering(tau_hat, config.subcarriers, config.subcarrier_spacing_hz)
    z = d.conj() @ y_tilde
    rel = np.atleast_2d(points) - geometry.center
    return _score(_signatures(geometry, config.wavelength, rel, _base_matrix(base)), z)


def default_range_tolerance(geometry, config, est: EstimatorConfig, rng: float) -> float:
    bin_m = config.speed_of_light / (2 * est.ifft_oversampling * config.subcarriers
                                     * config.subcarrier_spacing_hz)
    pitch_m = max(rng, geometry.aperture) * est.grid_pitch * beamwidth(geometry, config.wavelength)
    return 2 * bin_m + pitch_m


def _shell_radii(r_hat, eps, count, min_range):
    radii = r_hat + eps * np.linspace(-1.0, 1.0, count) if count > 1 else np.array([r_hat])
    return radii[radii > min_range]


def coarse_position(y_tilde, tau_hat: float, base, geometry: RisGeometry, config: SystemConfig,
                    est: EstimatorConfig | None = None, cache: GridCache | None = None,
                    cache_key=None) -> np.ndarray:
    """
    Grid maximiser of P(p) subject to |r - c tau_hat / 2| <= eps.

    Returns the global position of the best candidate.

    Raises
    ------
    EmptyGridError
        If no shell radius is admissible even after doubling eps once.
    """
    est = est or EstimatorConfig()
    base = _base_matrix(base)
    r_hat = config.speed_of_light * tau_hat / 2
    eps = est.range_tolerance or default_range_tolerance(geometry, config, est, r_hat)
    min_range = geometry.aperture / 2
    radii = _shell_radii(r_hat, eps, est.shells, min_range)
    if len(radii) == 0:
        radii = _shell_radii(r_hat, 2 * eps, est.shells, min_range)
        if len(radii) == 0:
            raise EmptyGridError(f"no admissible shell around r={r_hat:.3g} m (eps={eps:.3g} m)")

    d = delay_steering(tau_hat, config.subcarriers, config.subcarrier_spacing_hz)
    z = d.conj() @ y_tilde
    dirs = direction_grid(geometry, config.wavelength, est.grid_pitch)
    lam = config.wavelength

    best_score, best_rel = -np.inf, None
    for r in radii:
        if cache is None:
            S = _signatures(geometry, lam, dirs * r, base)
        else:
            S = cache.shell_signatures(geometry, lam, dirs, r, base, cache_key)
        scores = _score(S, z)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_score, best_rel = scores[k], dirs[k] * r

    if est.refine_span > 0:
        u0 = best_rel / np.linalg.norm(best_rel)
        patch = _local_patch(u0, est.refine_pitch * beamwidth(geometry, lam), est.refine_span)
        patch = patch[patch @ geometry.normal > 0]
        pts = (radii[:, None, None] * patch[None, :, :]).reshape(-1, 3)
        scores = _score(_signatures(geometry, lam, pts, base), z)
        k = int(np.argmax(scores))
        if scores[k] > best_score:
            best_rel = pts[k]
    return best_rel + geometry.center


# -- stage 3 ---------------------------------------------------------------

class ConcentratedCost:
    """
    sum_t |beta(p) zeta_t(p) - y_t|^2 / noise_variance as a function of the
    relative position, with zeta_t(p) = d(2|p|/c) b(p)^T w_t.
    """

    def __init__(self, y_tilde, base, geometry, config, noise_variance=None, gain_rule="ls"):
        self.Y = np.asarray(y_tilde)
        self.W = _base_matrix(base)
        self.geometry = geometry
        self.config = config
        self.scale = noise_variance if noise_variance else config.noise_variance / 2
        self.energy = float(np.vdot(self.Y, self.Y).real)
        self.gain_rule = gain_rule

    def _pieces(self, p_rel):
        cfg = self.config
        st = ris_response(self.geometry, p_rel, cfg.wavelength)
        tau = 2 * st.range / cfg.speed_of_light
        d = delay_steering(tau, cfg.subcarriers, cfg.subcarrier_spacing_hz)
        s = st.b @ self.W
        z = d.conj() @ self.Y
        return st, tau, d, s, z

    def gain(self, p_rel) -> complex:
        """Closed-form gain beta(p) (includes the sqrt(Es) factor)."""
        _, _, _, s, z = self._pieces(p_rel)
        return self._gain(s, z)

    def _gain(self, s, z):
        N = self.config.subcarriers
        if self.gain_rule == "per_t_mean":
            return complex(np.mean(z / (N * s)))
        return complex(np.vdot(s, z) / (N * np.vdot(s, s).real))

    def __call__(self, p_rel) -> float:
        _, _, _, s, z = self._pieces(p_rel)
        beta = self._gain(s, z)
        N = self.config.subcarriers
        val = (self.energy - 2 * (np.conj(beta) * np.vdot(s, z)).real
               + abs(beta) ** 2 * N * np.vdot(s, s).real)
        return float(val) / self.scale

    def value_and_grad(self, p_rel):
        """Least-squares gain only; analytic gradient with respect to p_rel."""
        cfg = self.config
        N = cfg.subcarriers
        st, tau, d, s, z = self._pieces(p_rel)
        d_dot = delay_steering_derivative(tau, N, cfg.subcarrier_spacing_hz)
        s_dot = self.W.T @ st.b_dot                                   # (T/2, 3)
        z_dot = np.outer(d_dot.conj() @ self.Y, 2 * st.u_ur / cfg.speed_of_light)
        A = np.vdot(s, z)
        Q = N * np.vdot(s, s).real
        dA = s_dot.conj().T @ z + z_dot.T @ s.conj()
        dQ = 2 * N * (s.conj() @ s_dot).real
        dA2 = 2 * (np.conj(A) * dA).real
        absA2 = abs(A) ** 2
        value = (self.energy - absA2 / Q) / self.scale
        grad = -(dA2 * Q - absA2 * dQ) / Q**2 / self.scale
        return value, grad


def ml_refine(y_tilde, initial, base, geometry: RisGeometry, config: SystemConfig,
              est: EstimatorConfig | None = None, noise_variance: float | None = None,
              tau_hat: float = np.nan) -> EstimateReport:
    """
    BFGS refinement of the concentrated cost from the global position
    ``initial``. If the optimiser ends above the starting cost or leaves the
    front half-space, the starting point is returned with ``refined=False``.
    """
    est = est or EstimatorConfig()
    cost = ConcentratedCost(y_tilde, base, geometry, config, noise_variance, est.gain_rule)
    x0 = np.asarray(initial, dtype=float) - geometry.center
    c0 = cost(x0)
    trace = [c0]

    if est.gain_rule == "ls":
        fun, jac = cost.value_and_grad, True
    else:
        fun, jac = cost, None
    res = minimize(fun, x0, jac=jac, method="BFGS",
                   callback=lambda xk: trace.append(cost(xk)),
                   options={"maxiter": est.max_iterations, "gtol": est.gradient_tolerance,
                            "xrtol": est.step_tolerance})
    x = res.x
    final = cost(x)
    ok = np.all(np.isfinite(x)) and final <= c0 and x @ geometry.normal > 0
    if not ok:
        x, final = x0, c0
    gain = cost.gain(x) / np.sqrt(config.symbol_energy)
    return EstimateReport(
        tau_hat=tau_hat,
        coarse_position=x0 + geometry.center,
        refined_position=x + geometry.center,
        gain_hat=gain,
        coarse_cost=c0,
        final_cost=final,
        iterations=int(res.nit),
        refined=bool(ok),
        cost_trace=trace,
        message=str(res.message),
    )


def localize(frame, schedule: PhaseSchedule, geometry: RisGeometry, config: SystemConfig,
             est: EstimatorConfig | None = None, cache: GridCache | None = None) -> EstimateReport:
    """Multipath removal followed by the three estimation stages."""
    est = est or EstimatorConfig()
    y_tilde, noise_var = remove_multipath(frame)
    tau_hat = coarse_delay(y_tilde, config, est.ifft_oversampling)
    p0 = coarse_position(y_tilde, tau_hat, schedule.base, geometry, config, est,
                         cache=cache, cache_key=schedule.key)
    report = ml_refine(y_tilde, p0, schedule.base, geometry, config, est,
                       noise_variance=noise_var, tau_hat=tau_hat)
    if frame.ue_position is not None:
        report.error_m = float(np.linalg.norm(report.refined_position - frame.ue_position))
    return report
