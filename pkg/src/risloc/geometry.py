"""
RIS array geometry and position-dependent response vectors.

The surface is a square lattice of ``side x side`` elements centred on
``center`` and lying in the local xy-plane of ``orientation``. Element
indices are row-major over the two lattice axes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class InvalidGeometryError(ValueError):
    """Raised for malformed RIS geometries (non-rotation orientation, bad sizes)."""


class SingularPositionError(ValueError):
    """Raised when the UE coincides with the RIS centre."""


@dataclass(frozen=True, eq=False)
class RisGeometry:
    """
    Square RIS centred at ``center``.

    Attributes
    ----------
    center : ndarray, size=(3,)
        RIS centre in global coordinates [m].
    orientation : ndarray, size=(3, 3)
        Rotation from the local surface frame to the global frame. The
        surface normal is the third column.
    elements_per_side : int
        Lattice side length; the RIS has ``elements_per_side**2`` elements.
    spacing : float
        Inter-element distance [m].
    element_positions : ndarray, size=(M, 3)
        Global element positions.
    relative_positions : ndarray, size=(3, M)
        ``element_positions.T - center[:, None]``.
    normal : ndarray, size=(3,)
    grating_lobe_risk : bool
        True when the spacing exceeds a quarter wavelength, i.e. the
        round-trip steering vector can alias in direction.
    """

    center: np.ndarray
    orientation: np.ndarray
    elements_per_side: int
    spacing: float
    element_positions: np.ndarray = field(repr=False)
    relative_positions: np.ndarray = field(repr=False)
    normal: np.ndarray
    grating_lobe_risk: bool

    @property
    def num_elements(self) -> int:
        return self.elements_per_side**2

    @property
    def aperture(self) -> float:
        """Side length of the surface [m]."""
        return self.elements_per_side * self.spacing

    def fingerprint(self) -> str:
        """Stable hash of the geometry, used as part of cache keys."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.center, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(self.orientation, dtype=np.float64).tobytes())
        h.update(np.int64(self.elements_per_side).tobytes())
        h.update(np.float64(self.spacing).tobytes())
        return h.hexdigest()[:16]

    def translated(self, shift) -> "RisGeometry":
        """Same surface moved by ``shift``."""
        return _assemble(self.center + np.asarray(shift, dtype=float), self.orientation,
                         self.elements_per_side, self.spacing, self.grating_lobe_risk)


@dataclass(frozen=True, eq=False)
class SteeringSet:
    """
    RIS response at one UE position.

    ``b`` is the round-trip response ``a * a`` and ``b_dot`` its Jacobian
    with respect to the UE position, size (M, 3).
    """

    a: np.ndarray | None
    b: np.ndarray
    b_dot: np.ndarray
    u_ur: np.ndarray
    range: float


def _assemble(center, orientation, side, spacing, flag) -> RisGeometry:
    offsets = (np.arange(side) - (side - 1) / 2) * spacing
    ii, kk = np.meshgrid(offsets, offsets, indexing="ij")
    local = np.stack([ii.ravel(), kk.ravel(), np.zeros(side * side)], axis=0)
    rel = orientation @ local
    # exact zeros for the off-plane component keep normal.T @ rel == 0
    return RisGeometry(
        center=center,
        orientation=orientation,
        elements_per_side=side,
        spacing=spacing,
        element_positions=(rel + center[:, None]).T,
        relative_positions=rel,
        normal=orientation[:, 2].copy(),
        grating_lobe_risk=flag,
    )


def build_geometry(center, orientation, side: int, spacing: float,
                   wavelength: float) -> RisGeometry:
    """
    Lay out a centred ``side x side`` lattice with pitch ``spacing``.

    Element (i, k) sits at local offset ((i - (side-1)/2) d, (k - (side-1)/2) d, 0).

    Raises
    ------
    InvalidGeometryError
        If ``orientation`` is not a proper rotation (orthogonality defect
        above 1e-9) or a size parameter is non-positive.
    """
    if int(side) != side or side < 1:
        raise InvalidGeometryError(f"side must be a positive integer, got {side}")
    if not spacing > 0:
        raise InvalidGeometryError(f"spacing must be positive, got {spacing}")
    if not wavelength > 0:
        raise InvalidGeometryError(f"wavelength must be positive, got {wavelength}")
    R = np.asarray(orientation, dtype=float)
    if R.shape != (3, 3):
        raise InvalidGeometryError("orientation must be a 3x3 matrix")
    defect = np.max(np.abs(R.T @ R - np.eye(3)))
    if defect > 1e-9 or np.linalg.det(R) < 0:
        raise InvalidGeometryError(
            f"orientation is not a rotation (orthogonality defect {defect:.3g})")
    center = np.asarray(center, dtype=float).reshape(3)
    return _assemble(center, R, int(side), float(spacing), bool(spacing > wavelength / 4))


def rotation_from_euler(angles_deg, seq: str = "zyx") -> np.ndarray:
    """Rotation matrix from intrinsic Euler angles in degrees."""
    from scipy.spatial.transform import Rotation

    return Rotation.from_euler(seq.upper(), angles_deg, degrees=True).as_matrix()


def ris_response(geometry: RisGeometry, p_ur, wavelength: float) -> SteeringSet:
    """
    Exact (spherical-wavefront) RIS response at relative UE position ``p_ur``.

    a_m = exp(j 2pi/lambda (|p_ur| - |p_u - p_rm|)), b = a * a, and

        B_dot = -j 4pi/lambda (diag(b) K^T - b u_ur^T)

    where the columns of K are unit vectors from each element to the UE.
    """
    p_ur = np.asarray(p_ur, dtype=float).reshape(3)
    rng = float(np.linalg.norm(p_ur))
    if rng == 0.0:
        raise SingularPositionError("UE position coincides with the RIS centre")
    diff = p_ur[:, None] - geometry.relative_positions          # (3, M)
    dist = np.sqrt(np.einsum("ij,ij->j", diff, diff))
    k = 2 * np.pi / wavelength
    a = np.exp(1j * k * (rng - dist))
    b = a * a
    u_ur = p_ur / rng
    K = diff / dist
    b_dot = -2j * k * (b[:, None] * K.T - b[:, None] * u_ur[None, :])
    return SteeringSet(a=a, b=b, b_dot=b_dot, u_ur=u_ur, range=rng)


def far_field_response(geometry: RisGeometry, u_ur, wavelength: float,
                       range: float) -> SteeringSet:
    """
    Plane-wave approximation of the round-trip response.

    [b_ff]_m = exp(j 4pi/lambda u^T (p_rm - p_r)) and
    B_dot_ff = j 4pi/(lambda r) diag(b_ff) Mbar^T (I - u u^T).
    """
    u = np.asarray(u_ur, dtype=float).reshape(3)
    if abs(np.linalg.norm(u) - 1.0) > 1e-9:
        raise ValueError("u_ur must be a unit vector")
    if not range > 0:
        raise ValueError("range must be positive")
    k2 = 4 * np.pi / wavelength
    Mbar = geometry.relative_positions
    b = np.exp(1j * k2 * (u @ Mbar))
    proj = np.eye(3) - np.outer(u, u)
    b_dot = 1j * k2 / range * (b[:, None] * (Mbar.T @ proj))
    return SteeringSet(a=None, b=b, b_dot=b_dot, u_ur=u, range=float(range))


def round_trip_matrix(geometry: RisGeometry, points_rel, wavelength: float) -> np.ndarray:
    """
    Round-trip responses b(p) for many relative positions at once.

    Parameters
    ----------
    points_rel : ndarray, size=(K, 3)

    Returns
    -------
    ndarray, size=(K, M), complex
    """
    P = np.atleast_2d(np.asarray(points_rel, dtype=float))
    Mbar = geometry.relative_positions
    r2 = np.einsum("ij,ij->i", P, P)
    m2 = np.einsum("ij,ij->j", Mbar, Mbar)
    d2 = r2[:, None] - 2.0 * (P @ Mbar) + m2[None, :]
    phase = (4 * np.pi / wavelength) * (np.sqrt(r2)[:, None] - np.sqrt(np.maximum(d2, 0.0)))
    return np.exp(1j * phase)
