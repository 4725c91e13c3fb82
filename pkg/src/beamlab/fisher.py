"""Observation model, Fisher information and the position error bound (PEB).

Parameters are ordered ``[rho, theta, phi, alpha_r, alpha_i]`` in the
spherical domain and ``[x, y, z, alpha_r, alpha_i]`` in the Cartesian one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import GeometryError, UnlocalizableError
from .geometry import RisArray

MAX_CONDITION = 1e12


def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SignalConfig:
    carrier_hz: float = 28e9
    bandwidth_hz: float = 120e3
    tx_power_watts: float = dbm_to_watts(20.0)
    noise_psd_watts_per_hz: float = dbm_to_watts(-174.0)
    noise_figure_db: float = 8.0
    num_transmissions: int = 40

    def __post_init__(self):
        for name in ("carrier_hz", "bandwidth_hz", "tx_power_watts", "noise_psd_watts_per_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.num_transmissions < 1:
            raise ValueError("num_transmissions must be >= 1")

    @property
    def energy_per_use(self) -> float:
        return self.tx_power_watts / self.bandwidth_hz

    @property
    def effective_noise_psd(self) -> float:
        return self.noise_psd_watts_per_hz * 10 ** (self.noise_figure_db / 10.0)

    def total_energy(self, num_elements: int) -> float:
        return self.energy_per_use * num_elements * self.num_transmissions

    @property
    def snr_factor(self) -> float:
        """``2 E_s / N0`` with the noise figure folded into ``N0``."""
        return 2.0 * self.energy_per_use / self.effective_noise_psd


@dataclass(frozen=True)
class ChannelState:
    alpha: complex
    p_ue: np.ndarray
    p_bs: np.ndarray

    def __post_init__(self):
        if self.alpha == 0:
            raise ValueError("alpha must be non-zero")
        object.__setattr__(self, "p_ue", np.asarray(self.p_ue, dtype=float))
        object.__setattr__(self, "p_bs", np.asarray(self.p_bs, dtype=float))


@dataclass
class Precoder:
    """RIS precoder ``F``; column ``t`` is ``diag(omega_t) a(p_bs)``."""

    F: np.ndarray
    provenance: str = ""
    profiles: np.ndarray | None = None

    @property
    def num_transmissions(self) -> int:
        return self.F.shape[1]

    @property
    def power(self) -> float:
        return float(np.real(np.vdot(self.F, self.F)))


@dataclass
class PebReport:
    fim_spherical: np.ndarray
    fim_cartesian: np.ndarray
    peb_meters: float
    condition_number: float
    extras: dict = field(default_factory=dict)


def channel_gain(p_bs, p_ris, p_ue, carrier_hz: float, magnitude_carrier_hz: float | None = None) -> complex:
    """Free-space cascaded gain ``lambda^2 / ((4 pi)^2 d1 d2) exp(-j 2 pi (d1 + d2) / lambda)``.

    ``magnitude_carrier_hz`` pins the wavelength used in the magnitude so that
    prototypes at different carriers see the same propagation loss.
    """
    d1 = float(np.linalg.norm(np.asarray(p_bs, float) - np.asarray(p_ris, float)))
    d2 = float(np.linalg.norm(np.asarray(p_ris, float) - np.asarray(p_ue, float)))
    if d1 == 0.0 or d2 == 0.0:
        raise GeometryError("zero link distance in channel gain")
    lam = geometry.wavelength(carrier_hz)
    lam_mag = geometry.wavelength(magnitude_carrier_hz) if magnitude_carrier_hz else lam
    mag = lam_mag**2 / ((4 * np.pi) ** 2 * d1 * d2)
    return complex(mag * np.exp(-2j * np.pi * (d1 + d2) / lam))


def mu_and_derivatives(array: RisArray, precoder, channel: ChannelState):
    """Noiseless observation ``mu = alpha F^T a(p_ue)`` and its ``(T, 5)`` Jacobian."""
    F = getattr(precoder, "F", precoder)
    a = geometry.steering_vector(array, channel.p_ue)
    d_rho, d_theta, d_phi = geometry.steering_derivatives(array, channel.p_ue)
    Fa = F.T @ np.column_stack([a, d_rho, d_theta, d_phi])
    mu = channel.alpha * Fa[:, 0]
    d_mu = np.column_stack([channel.alpha * Fa[:, 1:], Fa[:, 0], 1j * Fa[:, 0]])
    return mu, d_mu


def fim_spherical(d_mu, config: SignalConfig) -> np.ndarray:
    d_mu = np.asarray(d_mu)
    J = config.snr_factor * np.real(d_mu.conj().T @ d_mu)
    return 0.5 * (J + J.T)


def fim_cartesian(fim_sph, C) -> np.ndarray:
    J = C.T @ fim_sph @ C
    return 0.5 * (J + J.T)


def _equilibrate(J):
    d = np.diag(J).copy()
    if np.any(d <= 0) or not np.all(np.isfinite(J)):
        raise UnlocalizableError("Fisher information has a non-informative parameter")
    s = 1.0 / np.sqrt(d)
    return J * s[:, None] * s[None, :], s


def fim_condition(J) -> float:
    """Condition number after symmetric diagonal equilibration (scale invariant)."""
    try:
        Jn, _ = _equilibrate(J)
    except UnlocalizableError:
        return np.inf
    w = np.linalg.eigvalsh(Jn)
    return float(w[-1] / w[0]) if w[0] > 0 else np.inf


def peb(fim_car) -> float:
    """``sqrt(trace of the position block of inv(J))``.

    Raises :class:`UnlocalizableError` when the equilibrated FIM has a
    condition number above ``MAX_CONDITION``.
    """
    J = np.asarray(fim_car, dtype=float)
    Jn, s = _equilibrate(J)
    w, V = np.linalg.eigh(Jn)
    if w[0] <= 0 or w[-1] / w[0] > MAX_CONDITION:
        cond = w[-1] / w[0] if w[0] > 0 else np.inf
        raise UnlocalizableError(f"singular Fisher information (condition {cond:.3g})")
    inv = (V / w) @ V.T * s[:, None] * s[None, :]
    return float(np.sqrt(np.trace(inv[:3, :3])))


def compute_peb(array: RisArray, precoder, channel: ChannelState, config: SignalConfig) -> PebReport:
    _, d_mu = mu_and_derivatives(array, precoder, channel)
    J_sph = fim_spherical(d_mu, config)
    J_car = fim_cartesian(J_sph, geometry.jacobian_sph_wrt_cart(channel.p_ue - array.center))
    return PebReport(J_sph, J_car, peb(J_car), fim_condition(J_car))
