"""RIS geometry, coordinate maps and near-field steering vectors.

Conventions: the RIS lies in the x-z plane centred on the origin with its
boresight along +y.  Spherical coordinates are ``(rho, theta, phi)`` with
``theta`` the azimuth measured from +x in the x-y plane and ``phi`` the polar
(elevation) angle measured from +z, so the boresight point ``(0, 2, 0)`` maps
to ``(2, pi/2, pi/2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegeneratePointError, SingularGeometryError, SingularJacobianError

SPEED_OF_LIGHT = 299_792_458.0

# Points closer than this (radians) to the polar axis are rejected.
POLAR_TOLERANCE = 1e-9


class SphericalPoint(NamedTuple):
    rho: float
    theta: float
    phi: float


def wavelength(carrier_hz: float) -> float:
    return SPEED_OF_LIGHT / carrier_hz


@dataclass(frozen=True)
class RisArray:
    """Uniform rectangular RIS in the x-z plane.

    Elements are ordered row-major: ``rows`` along z, ``cols`` along x.
    """

    rows: int
    cols: int
    spacing: float
    wavelength: float
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError("rows and cols must be positive")
        if self.spacing <= 0 or self.wavelength <= 0:
            raise ValueError("spacing and wavelength must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        xs = (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.spacing
        zs = (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.spacing
        zz, xx = np.meshgrid(zs, xs, indexing="ij")
        pos = np.stack([xx.ravel(), np.zeros(xx.size), zz.ravel()], axis=1)
        object.__setattr__(self, "element_positions", pos + self.center)

    @classmethod
    def half_wavelength(cls, rows: int, cols: int, carrier_hz: float) -> "RisArray":
        lam = wavelength(carrier_hz)
        return cls(rows=rows, cols=cols, spacing=lam / 2.0, wavelength=lam)

    @property
    def num_elements(self) -> int:
        return self.rows * self.cols

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def aperture(self) -> float:
        """Largest element-to-element distance (the diagonal)."""
        return float(np.hypot(self.rows - 1, self.cols - 1) * self.spacing)


def cart_to_sph(p) -> SphericalPoint:
    p = np.asarray(p, dtype=float)
    rho = float(np.linalg.norm(p))
    if rho == 0.0 or not np.isfinite(rho):
        raise DegeneratePointError(f"cannot convert {p.tolist()} to spherical coordinates")
    theta = float(np.arctan2(p[1], p[0]))
    phi = float(np.arccos(np.clip(p[2] / rho, -1.0, 1.0)))
    return SphericalPoint(rho, theta, phi)


def sph_to_cart(s) -> np.ndarray:
    rho, theta, phi = s
    if rho <= 0:
        raise DegeneratePointError("rho must be positive")
    return np.array(
        [
            rho * np.sin(phi) * np.cos(theta),
            rho * np.sin(phi) * np.sin(theta),
            rho * np.cos(phi),
        ]
    )


def sph_to_cart_many(rho, theta, phi) -> np.ndarray:
    """Vectorised ``sph_to_cart``; broadcasts its arguments, returns ``(..., 3)``."""
    rho, theta, phi = np.broadcast_arrays(
        np.asarray(rho, float), np.asarray(theta, float), np.asarray(phi, float)
    )
    return np.stack(
        [rho * np.sin(phi) * np.cos(theta), rho * np.sin(phi) * np.sin(theta), rho * np.cos(phi)],
        axis=-1,
    )


def _element_offsets(array: RisArray, points: np.ndarray):
    """Return ``(diff, dist, ref)`` for points of shape ``(N, 3)``.

    ``diff[n, m] = p_n - p_m``, ``dist[n, m] = |p_n - p_m|`` and
    ``ref[n] = |p_n - p_RIS|``.
    """
    diff = points[:, None, :] - array.element_positions[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    ref = np.linalg.norm(points - array.center, axis=-1)
    if np.any(dist == 0.0):
        raise SingularGeometryError("point coincides with an RIS element")
    if np.any(ref == 0.0):
        raise SingularGeometryError("point coincides with the RIS centre")
    return diff, dist, ref


def steering_matrix(array: RisArray, points) -> np.ndarray:
    """Stack of steering vectors, shape ``(N, M)``, one row per point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    _, dist, ref = _element_offsets(array, points)
    return np.exp(-1j * array.wavenumber * (dist - ref[:, None]))


def steering_vector(array: RisArray, p) -> np.ndarray:
    """Near-field RIS response toward ``p``.

    ``a_m = exp(-j k (|p - p_m| - |p - p_RIS|))``; every entry is unit modulus.
    """
    return steering_matrix(array, p)[0]


def _spherical_tangents(s: SphericalPoint) -> np.ndarray:
    """Rows are dp/drho, dp/dtheta, dp/dphi."""
    rho, theta, phi = s
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    return np.array(
        [
            [sp * ct, sp * st, cp],
            [-rho * sp * st, rho * sp * ct, 0.0],
            [rho * cp * ct, rho * cp * st, -rho * sp],
        ]
    )


def steering_derivatives(array: RisArray, p):
    """Partial derivatives of the steering vector w.r.t. ``rho``, ``theta``, ``phi``.

    Each is taken holding the other two spherical coordinates fixed.  The
    reference distance ``|p - p_RIS|`` equals ``rho`` (RIS at the origin of
    the spherical frame), so only its ``rho`` derivative is non-zero.
    """
    p = np.asarray(p, dtype=float)
    s = cart_to_sph(p - array.center)
    diff, dist, _ = _element_offsets(array, p[None, :])
    diff, dist = diff[0], dist[0]
    a = np.exp(-1j * array.wavenumber * (dist - s.rho))
    tangents = _spherical_tangents(s)
    # d|p - p_m| / dx = (p - p_m) . dp/dx / |p - p_m|
    ddist = (diff @ tangents.T) / dist[:, None]
    ddist[:, 0] -= 1.0
    d = -1j * array.wavenumber * ddist * a[:, None]
    return d[:, 0], d[:, 1], d[:, 2]


def jacobian_sph_wrt_cart(p) -> np.ndarray:
    """5x5 Jacobian of ``[rho, theta, phi, alpha_r, alpha_i]`` w.r.t. ``[x, y, z, alpha_r, alpha_i]``."""
    p = np.asarray(p, dtype=float)
    x, y, z = p
    rho = float(np.linalg.norm(p))
    if rho == 0.0:
        raise DegeneratePointError("Jacobian undefined at the origin")
    rxy = float(np.hypot(x, y))
    if rxy / rho < np.sin(POLAR_TOLERANCE):
        raise SingularJacobianError("point lies on the polar axis")
    C = np.eye(5)
    C[0, :3] = p / rho
    C[1, :3] = [-y / rxy**2, x / rxy**2, 0.0]
    C[2, :3] = [x * z / (rho**2 * rxy), y * z / (rho**2 * rxy), -rxy / rho**2]
    return C
