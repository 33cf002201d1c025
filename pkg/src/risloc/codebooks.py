"""
RIS phase-profile schedules.

A schedule holds T/2 base profiles; transmission 2t-1 uses the base profile
and transmission 2t its negation, so the profiles sum to zero over a frame
and any RIS-independent multipath cancels in the pairwise difference.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import RisGeometry, round_trip_matrix
from .signal import ReceivedFrame, ShapeError

CACHE_ENV_VAR = "RISLOC_CACHE_DIR"


@dataclass(frozen=True, eq=False)
class PhaseSchedule:
    """
    Attributes
    ----------
    base : ndarray, size=(M, T/2), complex unit-modulus
    kind : {"random", "directional"}
    seed : int or None
    prior_center : ndarray or None
        Approximate UE position used to aim a directional codebook.
    radius : float or None
        Uncertainty radius the aim points were drawn from [m].
    aim_points : ndarray, size=(T/2, 3) or None
    geometry_id : str
        Fingerprint of the RIS the schedule was generated for.
    """

    base: np.ndarray = field(repr=False)
    kind: str
    seed: int | None = None
    prior_center: np.ndarray | None = None
    radius: float | None = None
    aim_points: np.ndarray | None = field(default=None, repr=False)
    geometry_id: str = ""

    @property
    def num_elements(self) -> int:
        return self.base.shape[0]

    @property
    def half_length(self) -> int:
        return self.base.shape[1]

    @property
    def transmissions(self) -> int:
        return 2 * self.base.shape[1]

    @cached_property
    def expanded(self) -> np.ndarray:
        """M x T matrix with columns w, -w interleaved."""
        M, H = self.base.shape
        W = np.empty((M, 2 * H), dtype=complex)
        W[:, 0::2] = self.base
        W[:, 1::2] = -self.base
        return W

    @property
    def key(self) -> str:
        return f"{self.kind}-s{self.seed}-M{self.num_elements}-T{self.transmissions}-{self.geometry_id}"


def random_codebook(m: int, half_t: int, seed: int, geometry_id: str = "") -> PhaseSchedule:
    """Base profiles with i.i.d. phases uniform on [0, 2pi)."""
    if m < 1 or half_t < 1:
        raise ValueError("m and half_t must be >= 1")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0.0, 2 * np.pi, size=(m, half_t))
    return PhaseSchedule(base=np.exp(1j * theta), kind="random", seed=seed, geometry_id=geometry_id)


def sample_in_ball(rng: np.random.Generator, center, radius: float, count: int) -> np.ndarray:
    """``count`` points uniform in the solid ball S(center, radius)."""
    v = rng.standard_normal((count, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / 3.0)
    return np.asarray(center, dtype=float)[None, :] + v * r[:, None]


def directional_codebook(geometry: RisGeometry, prior_center, radius: float, half_t: int,
                         wavelength: float, seed: int) -> PhaseSchedule:
    """
    Conjugate round-trip beams toward ``half_t`` points drawn uniformly in
    the ball of ``radius`` around ``prior_center`` (global coordinates).
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    prior_center = np.asarray(prior_center, dtype=float).reshape(3)
    if (prior_center - geometry.center) @ geometry.normal <= 0:
        raise ValueError("prior centre must lie in front of the RIS")
    rng = np.random.default_rng(seed)
    aims = sample_in_ball(rng, prior_center, radius, half_t)
    base = np.conj(round_trip_matrix(geometry, aims - geometry.center, wavelength)).T
    return PhaseSchedule(base=np.ascontiguousarray(base), kind="directional", seed=seed,
                         prior_center=prior_center, radius=float(radius), aim_points=aims,
                         geometry_id=geometry.fingerprint())


def remove_multipath(frame: ReceivedFrame) -> tuple[np.ndarray, float]:
    """
    Pairwise half-differences (y_{2t-1} - y_{2t}) / 2.

    Returns
    -------
    y_tilde : ndarray, size=(N, T/2)
    noise_variance : float
        Per-sample noise variance of ``y_tilde`` (half of the frame's).
    """
    Y = frame.samples
    if Y.ndim != 2 or Y.shape[1] % 2:
        raise ShapeError(f"need an even number of columns, got shape {Y.shape}")
    return 0.5 * (Y[:, 0::2] - Y[:, 1::2]), frame.noise_variance / 2


# -- on-disk cache ---------------------------------------------------------

def save_schedule(path, schedule: PhaseSchedule) -> Path:
    """Write ``schedule`` to an .npz container; round-trips bit-exactly."""
    path = Path(path)
    header = {
        "kind": schedule.kind,
        "seed": schedule.seed,
        "M": schedule.num_elements,
        "T": schedule.transmissions,
        "geometry_id": schedule.geometry_id,
        "radius": schedule.radius,
    }
    arrays = {"header": np.array(json.dumps(header)), "base": schedule.base}
    if schedule.prior_center is not None:
        arrays["prior_center"] = schedule.prior_center
    if schedule.aim_points is not None:
        arrays["aim_points"] = schedule.aim_points
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_schedule(path) -> PhaseSchedule:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        base = data["base"]
        if base.shape != (header["M"], header["T"] // 2):
            raise ShapeError(f"{path}: base shape {base.shape} disagrees with header")
        return PhaseSchedule(
            base=base,
            kind=header["kind"],
            seed=header["seed"],
            prior_center=data["prior_center"] if "prior_center" in data else None,
            radius=header["radius"],
            aim_points=data["aim_points"] if "aim_points" in data else None,
            geometry_id=header["geometry_id"],
        )


class ScheduleCache:
    """
    Directory of cached schedules keyed by (kind, seed, M, T, geometry).

    Directional schedules additionally depend on the prior centre and
    radius, which are folded into the file name.
    """

    def __init__(self, directory=None):
        directory = directory or os.environ.get(CACHE_ENV_VAR)
        if directory is None:
            raise ValueError(f"no cache directory given and ${CACHE_ENV_VAR} unset")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, kind, seed, m, t, geometry_id, extra="") -> Path:
        return self.directory / f"{kind}-s{seed}-M{m}-T{t}-{geometry_id}{extra}.npz"

    def random(self, geometry: RisGeometry, half_t: int, seed: int) -> PhaseSchedule:
        path = self._path("random", seed, geometry.num_elements, 2 * half_t, geometry.fingerprint())
        if path.exists():
            return load_schedule(path)
        sched = random_codebook(geometry.num_elements, half_t, seed, geometry.fingerprint())
        save_schedule(path, sched)
        return sched

    def directional(self, geometry: RisGeometry, prior_center, radius: float, half_t: int,
                    wavelength: float, seed: int) -> PhaseSchedule:
        pc = np.asarray(prior_center, dtype=float)
        tag = "-" + _short_hash(pc.tobytes() + np.float64(radius).tobytes() + np.float64(wavelength).tobytes())
        path = self._path("directional", seed, geometry.num_elements, 2 * half_t,
                          geometry.fingerprint(), tag)
        if path.exists():
            return load_schedule(path)
        sched = directional_codebook(geometry, pc, radius, half_t, wavelength, seed)
        save_schedule(path, sched)
        return sched

    def entries(self) -> list[Path]:
        return sorted(self.directory.glob("*.npz"))


def _short_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:12]
