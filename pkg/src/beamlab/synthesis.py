"""Desired beams, least-squares RIS profile synthesis and pattern analysis.

The synthesis problem is ``min_{s, omega} ||g - s B omega||^2`` with every
entry of ``omega`` restricted to a lookup table.  It is attacked by projected
gradient descent: an exact least-squares update of the complex scale ``s``,
a gradient step on ``omega`` with step ``beta / lambda_max(|s|^2 B^H B)`` and
an element-wise projection back onto the table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from . import geometry
from .errors import DegeneratePointError, DivergenceError
from .geometry import RisArray, SphericalPoint
from .hardware import LookupTable, RisProfile, project

log = logging.getLogger(__name__)

BEAM_KINDS = ("steering", "derivative_rho", "derivative_theta", "derivative_phi")
SLICE_AXES = ("rho", "theta", "phi")
GAIN_FLOOR_DB = -200.0


@dataclass(frozen=True)
class DesiredBeam:
    kind: str
    target: np.ndarray
    tx: np.ndarray

    def __post_init__(self):
        if self.kind not in BEAM_KINDS:
            raise ValueError(f"unknown beam kind {self.kind!r}")
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        object.__setattr__(self, "tx", np.asarray(self.tx, dtype=float))


@dataclass(frozen=True)
class SliceGrid:
    """Three 1D cuts through ``ref``, each varying one spherical coordinate."""

    rho_samples: np.ndarray
    theta_samples: np.ndarray
    phi_samples: np.ndarray
    ref: SphericalPoint

    def __post_init__(self):
        for axis in SLICE_AXES:
            samples = np.asarray(getattr(self, f"{axis}_samples"), dtype=float)
            if samples.ndim != 1 or samples.size == 0:
                raise ValueError(f"{axis} samples must be a nonempty 1D list")
            if np.any(np.diff(samples) <= 0):
                raise ValueError(f"{axis} samples must be strictly increasing")
            object.__setattr__(self, f"{axis}_samples", samples)
        if self.rho_samples[0] <= 0:
            raise ValueError("rho samples must be positive")
        for axis in ("theta", "phi"):
            s = getattr(self, f"{axis}_samples")
            if s[0] < 0 or s[-1] > np.pi:
                raise ValueError(f"{axis} samples must lie in [0, pi]")
        object.__setattr__(self, "ref", SphericalPoint(*map(float, self.ref)))
        for axis, value in zip(SLICE_AXES, self.ref):
            s = getattr(self, f"{axis}_samples")
            if not s[0] <= value <= s[-1]:
                raise ValueError(f"reference {axis}={value} is not bracketed by its samples")

    def samples(self, axis: str) -> np.ndarray:
        return getattr(self, f"{axis}_samples")

    def points(self, axis: str) -> np.ndarray:
        """Cartesian points of one slice, shape ``(N, 3)``."""
        rho, theta, phi = self.ref
        s = self.samples(axis)
        if axis == "rho":
            return geometry.sph_to_cart_many(s, theta, phi)
        if axis == "theta":
            return geometry.sph_to_cart_many(rho, s, phi)
        if axis == "phi":
            return geometry.sph_to_cart_many(rho, theta, s)
        raise ValueError(f"unknown slice axis {axis!r}")


def default_slice_grid(ref, n_angle: int = 181, n_range: int = 101) -> SliceGrid:
    """Uniform open-interval angle cuts and a +-50 % range cut around ``ref``."""
    ref = SphericalPoint(*ref)
    if not (0.0 < ref.theta < np.pi and 0.0 < ref.phi < np.pi):
        raise DegeneratePointError(f"slice reference angles must lie in (0, pi), got {tuple(ref)}")
    angles = np.linspace(0.0, np.pi, n_angle + 2)[1:-1]
    return SliceGrid(
        rho_samples=np.linspace(0.5 * ref.rho, 1.5 * ref.rho, n_range),
        theta_samples=angles,
        phi_samples=angles,
        ref=ref,
    )


@dataclass
class SynthesisResult:
    profile: RisProfile
    scale: complex
    objective_trace: list[float] = field(default_factory=list)
    iterations_used: int = 0

    @property
    def omega(self) -> np.ndarray:
        return self.profile.omega


@dataclass(frozen=True)
class PatternMetrics:
    main_peak_db: float
    main_peak_direction: float
    secondary_peak_db: float | None = None
    secondary_peak_direction: float | None = None


def combined_response_b(array: RisArray, p, p_tx) -> np.ndarray:
    """Cascaded TX-RIS-RX response ``a(p) * a(p_tx)`` (Hadamard product)."""
    return geometry.steering_vector(array, p) * geometry.steering_vector(array, p_tx)


def build_B_matrix(array: RisArray, grid_points, p_tx) -> np.ndarray:
    """Rows are ``b(p_k, p_tx)^T`` for each grid point."""
    a_tx = geometry.steering_vector(array, p_tx)
    return geometry.steering_matrix(array, grid_points) * a_tx[None, :]


def ideal_profile(beam: DesiredBeam, array: RisArray) -> np.ndarray:
    """Unconstrained coefficients whose pattern is the desired beam.

    Steering: ``conj(a(p_des) * a(p_tx))``; derivative kinds replace
    ``a(p_des)`` by its partial derivative along the named coordinate.
    """
    a_tx = geometry.steering_vector(array, beam.tx)
    if beam.kind == "steering":
        a = geometry.steering_vector(array, beam.target)
    else:
        d_rho, d_theta, d_phi = geometry.steering_derivatives(array, beam.target)
        a = {"derivative_rho": d_rho, "derivative_theta": d_theta, "derivative_phi": d_phi}[beam.kind]
    return np.conj(a * a_tx)


def desired_pattern_value(beam: DesiredBeam, array: RisArray, p) -> complex:
    return complex(ideal_profile(beam, array) @ combined_response_b(array, p, beam.tx))


def largest_eigenvalue(B: np.ndarray, max_iters: int = 200, tol: float = 1e-10) -> float:
    """``lambda_max(B^H B)`` by power iteration on the smaller Gram matrix."""
    G = B @ B.conj().T if B.shape[0] <= B.shape[1] else B.conj().T @ B
    n = G.shape[0]
    # deterministic start with no exact orthogonality to the top eigenvector
    x = np.ones(n, dtype=complex) + 1j * np.linspace(0.0, 1.0, n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iters):
        y = G @ x
        lam = float(np.real(np.vdot(x, y)))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        if np.linalg.norm(y - lam * x) <= tol * max(abs(lam), 1.0):
            break
        x = y / ny
    return lam


def min_norm_solve(B: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Regularised pseudo-inverse ``B^+ g`` through the normal equations."""
    N, M = B.shape
    if N <= M:
        G = B @ B.conj().T
        eps = 1e-9 * np.real(np.trace(G))
        y = scipy.linalg.solve(G + eps * np.eye(N), g, assume_a="pos")
        return B.conj().T @ y
    G = B.conj().T @ B
    eps = 1e-9 * np.real(np.trace(G))
    return scipy.linalg.solve(G + eps * np.eye(M), B.conj().T @ g, assume_a="pos")


def _check(value, what):
    if not np.all(np.isfinite(value)):
        raise DivergenceError(f"non-finite {what} during synthesis")


def _run(
    Bs: Sequence[np.ndarray],
    gs: Sequence[np.ndarray],
    table: LookupTable,
    omega0: np.ndarray,
    *,
    beta: float,
    max_iters: int,
    tol: float,
    joint_scale: bool,
) -> SynthesisResult:
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    lams = [largest_eigenvalue(B) for B in Bs]

    def scale_terms(omega):
        Bw = [B @ omega for B in Bs]
        num = [np.vdot(bw, g) for bw, g in zip(Bw, gs)]
        den = [np.real(np.vdot(bw, bw)) for bw in Bw]
        if min(den) <= 0.0:
            raise DivergenceError("profile is in the null space of a response matrix")
        if joint_scale or len(Bs) == 1:
            s = sum(num) / sum(den)
        else:
            s = sum(n / d for n, d in zip(num, den))
        return s, Bw

    def objective(s, Bw):
        return float(sum(np.real(np.vdot(g - s * bw, g - s * bw)) for g, bw in zip(gs, Bw)))

    omega = omega0
    s, Bw = scale_terms(omega)
    obj = objective(s, Bw)
    _check(obj, "objective")
    trace = [obj]
    best = (obj, omega, s)
    iters = 0
    for iters in range(1, max_iters + 1):
        step = np.zeros_like(omega)
        for B, g, bw, lam in zip(Bs, gs, Bw, lams):
            step += np.conj(s) * (B.conj().T @ (g - s * bw)) / (abs(s) ** 2 * lam)
        omega_u = omega + beta * step
        _check(omega_u, "profile")
        new = project(omega_u, table)
        s, Bw = scale_terms(new)
        obj = objective(s, Bw)
        _check(obj, "objective")
        trace.append(obj)
        if obj < best[0]:
            best = (obj, new, s)
        converged = np.array_equal(new, omega) or abs(trace[-2] - obj) <= tol * max(trace[-2], 1e-300)
        omega = new
        if converged:
            break
    log.debug("synthesis stopped after %d iterations, objective %.6g", iters, best[0])
    return SynthesisResult(RisProfile(best[1], table.name), complex(best[2]), trace, iters)


def synthesize_full(
    g,
    B,
    table: LookupTable,
    *,
    beta: float = 0.5,
    max_iters: int = 200,
    tol: float = 1e-6,
    omega0=None,
) -> SynthesisResult:
    """Projected gradient descent over a full grid of sample points.

    Initialised at ``proj(B^+ g)`` unless ``omega0`` is given.  The returned
    profile is the best iterate seen; ``objective_trace`` holds the residual
    after each iteration with ``s`` at its least-squares optimum.
    """
    B = np.asarray(B, dtype=complex)
    g = np.asarray(g, dtype=complex)
    if B.shape[0] != g.shape[0]:
        raise ValueError("g and B have inconsistent shapes")
    if omega0 is None:
        omega0 = project(min_norm_solve(B, g), table)
    return _run([B], [g], table, np.asarray(omega0, dtype=complex),
                beta=beta, max_iters=max_iters, tol=tol, joint_scale=True)


def slice_problem(omega_ideal, grid: SliceGrid, array: RisArray, p_tx):
    """Per-slice response matrices and desired patterns for an ideal profile."""
    Bs = [build_B_matrix(array, grid.points(axis), p_tx) for axis in SLICE_AXES]
    gs = [B @ omega_ideal for B in Bs]
    return Bs, gs


def synthesize_reduced(
    beam: DesiredBeam | np.ndarray,
    grid: SliceGrid,
    array: RisArray,
    table: LookupTable,
    *,
    p_tx=None,
    beta: float = 0.5,
    max_iters: int = 200,
    tol: float = 1e-6,
    joint_scale: bool = True,
    omega0=None,
) -> SynthesisResult:
    """Reduced-complexity synthesis on three 1D slices through the target.

    ``beam`` is a :class:`DesiredBeam` or directly an ideal profile (then
    ``p_tx`` is required).  By default ``s`` is the joint least-squares
    optimum of the summed objective; ``joint_scale=False`` instead sums the
    per-slice least-squares scalars, which overshoots when all three slices
    fit well.  ``objective_trace`` always reports the summed
    residual at the scale that was used.
    """
    if isinstance(beam, DesiredBeam):
        omega_ideal = ideal_profile(beam, array)
        p_tx = beam.tx
    else:
        omega_ideal = np.asarray(beam, dtype=complex)
        if p_tx is None:
            raise ValueError("p_tx is required when passing an ideal profile")
    Bs, gs = slice_problem(omega_ideal, grid, array, p_tx)
    if omega0 is None:
        omega0 = project(sum(min_norm_solve(B, g) for B, g in zip(Bs, gs)), table)
    return _run(Bs, gs, table, np.asarray(omega0, dtype=complex),
                beta=beta, max_iters=max_iters, tol=tol, joint_scale=joint_scale)


def gain_db(values, floor_db: float = GAIN_FLOOR_DB) -> np.ndarray:
    mag = np.abs(np.asarray(values))
    with np.errstate(divide="ignore"):
        out = 20.0 * np.log10(mag)
    return np.maximum(out, floor_db)


def evaluate_pattern(
    omega, array: RisArray, p_tx, axis: str, grid: SliceGrid, floor_db: float = GAIN_FLOOR_DB
) -> np.ndarray:
    """Gain ``20 log10 |omega^T b(p, p_tx)|`` along one slice; returns ``(N, 2)``."""
    omega = getattr(omega, "omega", omega)
    B = build_B_matrix(array, grid.points(axis), p_tx)
    return np.column_stack([grid.samples(axis), gain_db(B @ omega, floor_db)])


def evaluate_pattern_2d(
    omega, array: RisArray, p_tx, theta_grid, phi_grid, rho_ref: float,
    floor_db: float = GAIN_FLOOR_DB,
) -> np.ndarray:
    """Gain over a ``(len(phi_grid), len(theta_grid))`` angular grid at range ``rho_ref``."""
    omega = getattr(omega, "omega", omega)
    theta_grid = np.asarray(theta_grid, dtype=float)
    phi_grid = np.asarray(phi_grid, dtype=float)
    a_tx = geometry.steering_vector(array, p_tx)
    w = omega * a_tx
    out = np.empty((phi_grid.size, theta_grid.size))
    for i, phi in enumerate(phi_grid):
        pts = geometry.sph_to_cart_many(rho_ref, theta_grid, phi)
        out[i] = gain_db(geometry.steering_matrix(array, pts) @ w, floor_db)
    return out


def _local_maxima(y: np.ndarray) -> np.ndarray:
    if y.size < 3:
        return np.array([int(np.argmax(y))])
    inner = np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])) + 1
    edges = [i for i, ok in ((0, y[0] > y[1]), (y.size - 1, y[-1] > y[-2])) if ok]
    return np.sort(np.concatenate([inner, np.array(edges, dtype=int)]))


def lobe_metrics(pattern, desired_coordinate: float, unconstrained_envelope=None) -> PatternMetrics:
    """Main-lobe peak near the desired coordinate and strongest envelope-breaking sidelobe.

    The main lobe is the local maximum closest to ``desired_coordinate``,
    extended to its half-power (-3 dB) points.  The secondary lobe is the
    highest local maximum outside that window whose gain exceeds
    ``unconstrained_envelope`` (a second pattern on the same samples); with no
    envelope every outside maximum qualifies.
    """
    pattern = np.asarray(pattern, dtype=float)
    x, y = pattern[:, 0], pattern[:, 1]
    if not x[0] <= desired_coordinate <= x[-1]:
        raise ValueError("pattern does not cover the desired coordinate")
    maxima = _local_maxima(y)
    centre = int(np.argmin(np.abs(x - desired_coordinate)))
    # climb to the local max of the lobe containing the desired coordinate
    k = centre
    while True:
        nxt = k + (1 if k + 1 < y.size and y[k + 1] > y[k] else 0)
        nxt = nxt if nxt != k else k - (1 if k > 0 and y[k - 1] > y[k] else 0)
        if nxt == k:
            break
        k = nxt
    peak = k
    half = y[peak] - 3.0103
    lo = peak
    while lo > 0 and y[lo - 1] >= half:
        lo -= 1
    hi = peak
    while hi < y.size - 1 and y[hi + 1] >= half:
        hi += 1
    # a lobe is outside the window once the pattern dips below half power in between
    candidates = [i for i in maxima if i < lo or i > hi]
    if unconstrained_envelope is not None:
        env = np.asarray(unconstrained_envelope, dtype=float)
        env = env[:, 1] if env.ndim == 2 else env
        candidates = [i for i in candidates if y[i] > env[i]]
    if not candidates:
        return PatternMetrics(float(y[peak]), float(x[peak]))
    sec = max(candidates, key=lambda i: y[i])
    return PatternMetrics(float(y[peak]), float(x[peak]), float(y[sec]), float(x[sec]))
