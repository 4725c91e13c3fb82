"""RIS profile designs realised as T-transmission precoders.

Three designs are available: random profiles drawn from a table, directional
profiles steered toward points sampled in an uncertainty sphere around a prior
UE position, and the localization-optimal design that time-shares the
steering beam and its three spherical derivatives with weights minimising the
PEB.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import geometry, synthesis
from .errors import DegenerateBasisError, GeometryError, UnlocalizableError
from .fisher import ChannelState, Precoder, SignalConfig, compute_peb, fim_cartesian, fim_spherical, peb
from .geometry import RisArray
from .hardware import LookupTable, UNIT_CIRCLE, project

DESIGN_KINDS = ("random", "directional", "optimal")


@dataclass(frozen=True)
class BeamBasis:
    U: np.ndarray
    U_ortho: np.ndarray


@dataclass(frozen=True)
class PowerAllocation:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < -1e-12):
            raise ValueError("allocation weights must be nonnegative")
        object.__setattr__(self, "weights", np.maximum(w, 0.0))

    @property
    def total(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class DesignSpec:
    kind: str
    table: LookupTable
    seed: int = 0
    mc_trials: int = 100
    sphere_radius: float | None = None
    prior_center: np.ndarray | None = None
    per_trial_direction: bool = False

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise ValueError(f"unknown design {self.kind!r}")
        if self.mc_trials < 1:
            raise ValueError("mc_trials must be >= 1")
        if self.kind == "directional" and not (self.sphere_radius and self.sphere_radius > 0):
            raise ValueError("directional design needs a positive sphere_radius")


def build_beam_basis(array: RisArray, p_ue) -> BeamBasis:
    """Steering vector and its spherical derivatives, conjugated and orthogonalised.

    Classical Gram-Schmidt in column order, each column rescaled to norm
    ``sqrt(M)`` so that ``U_ortho^H U_ortho = M I``.
    """
    a = geometry.steering_vector(array, p_ue)
    U = np.conj(np.column_stack([a, *geometry.steering_derivatives(array, p_ue)]))
    M = array.num_elements
    Q = np.zeros_like(U)
    for k in range(U.shape[1]):
        v = U[:, k].copy()
        for _ in range(2):  # re-orthogonalise once for numerical safety
            v -= Q[:, :k] @ (Q[:, :k].conj().T @ v)
        if np.linalg.norm(v) <= 1e-10 * np.linalg.norm(U[:, k]):
            raise DegenerateBasisError(f"beam {k} is linearly dependent on the previous ones")
        Q[:, k] = v / np.linalg.norm(v)
    return BeamBasis(U, np.sqrt(M) * Q)


def single_transmission_fim(array: RisArray, f, channel: ChannelState, config: SignalConfig) -> np.ndarray:
    """Cartesian FIM of one transmission with precoder column ``f``."""
    a = geometry.steering_vector(array, channel.p_ue)
    derivs = geometry.steering_derivatives(array, channel.p_ue)
    fa = f @ np.column_stack([a, *derivs])
    d_mu = np.concatenate([channel.alpha * fa[1:], [fa[0], 1j * fa[0]]])[None, :]
    C = geometry.jacobian_sph_wrt_cart(channel.p_ue - array.center)
    return fim_cartesian(fim_spherical(d_mu, config), C)


def per_beam_fims(basis: BeamBasis, array: RisArray, channel: ChannelState, config: SignalConfig) -> np.ndarray:
    """Stack ``(4, 5, 5)`` of single-transmission FIMs, one per basis column."""
    return np.stack([single_transmission_fim(array, basis.U_ortho[:, k], channel, config)
                     for k in range(basis.U_ortho.shape[1])])


def project_to_simplex(v, total: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{x >= 0, sum(x) = total}``."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    rho = np.nonzero(u - css / np.arange(1, v.size + 1) > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _position_variance(fims, lam):
    """``trace(inv(sum lam_k J_k)[:3, :3])`` and its gradient; ``inf`` if singular."""
    J = np.tensordot(lam, fims, axes=1)
    d = np.diag(J)
    if np.any(d <= 0):
        return np.inf, None
    s = 1.0 / np.sqrt(d)
    Jn = J * s[:, None] * s[None, :]
    w, V = np.linalg.eigh(Jn)
    if w[0] <= 0 or w[-1] / w[0] > 1e12:
        return np.inf, None
    inv = (V / w) @ V.T * s[:, None] * s[None, :]
    P = inv[:, :3] @ inv[:3, :]  # inv E E^T inv
    grad = -np.einsum("kij,ji->k", fims, P)
    return float(np.trace(inv[:3, :3])), grad


def optimize_allocation(fims, T: float, *, max_iters: int = 2000, tol: float = 1e-12) -> PowerAllocation:
    """Minimise the PEB over ``{lam >= 0, sum(lam) = T}`` for ``J(lam) = sum lam_k J_k``.

    Projected gradient descent with Armijo backtracking, started at the equal
    split.  The objective (trace of the inverse) is convex in ``lam``.
    """
    fims = np.asarray(fims, dtype=float)
    K = fims.shape[0]
    lam = np.full(K, T / K)
    f, g = _position_variance(fims, lam)
    if not np.isfinite(f):
        # equal split is the most informative mix; singular there means singular everywhere
        raise UnlocalizableError("no allocation yields an invertible Fisher information")
    step = T / (np.max(np.abs(g)) + 1e-300)
    for _ in range(max_iters):
        while True:
            cand = project_to_simplex(lam - step * g, T)
            fc, gc = _position_variance(fims, cand)
            if np.isfinite(fc) and fc <= f + 1e-4 * g @ (cand - lam):
                break
            step *= 0.5
            if step < 1e-20 * T / (np.max(np.abs(g)) + 1e-300):
                return PowerAllocation(lam)
        moved = np.max(np.abs(cand - lam))
        converged = f - fc <= tol * f or moved <= 1e-12 * T
        lam, f, g = cand, fc, gc
        if converged:
            break
        step *= 2.0
    return PowerAllocation(lam)


def allocation_peb(fims, lam) -> float:
    return peb(np.tensordot(np.asarray(lam, float), np.asarray(fims, float), axes=1))


def largest_remainder_counts(weights, T: int) -> np.ndarray:
    """Integer counts summing to ``T``; leftover units go to the largest remainders.

    Ties go to the lower index.
    """
    w = np.asarray(weights, dtype=float)
    quota = w * T / w.sum()
    counts = np.floor(quota + 1e-12).astype(int)
    rem = quota - counts
    order = sorted(range(w.size), key=lambda k: (-round(rem[k], 12), k))
    for k in order[: T - counts.sum()]:
        counts[k] += 1
    return counts


def time_sharing_counts(fims, allocation: PowerAllocation, T: int, max_moves: int = 1000) -> np.ndarray:
    """Integer slot counts for an allocation, refined against the per-beam FIMs.

    Starts from largest-remainder rounding, then repeatedly applies the single
    slot transfer between two beams that lowers the PEB most, until none
    does.  The continuous optimum often gives the steering beam a vanishing
    but non-zero weight (it pins the channel gain); plain rounding drops it
    and leaves a singular FIM, which the transfers repair.
    """
    fims = np.asarray(fims, dtype=float)
    counts = largest_remainder_counts(allocation.weights, T)
    best, _ = _position_variance(fims, counts.astype(float))
    K = counts.size
    if not np.isfinite(best) and T >= K:
        # single transfers cannot restore rank from a split that drops several beams
        counts = 1 + largest_remainder_counts(allocation.weights, T - K)
        best, _ = _position_variance(fims, counts.astype(float))
    for _ in range(max_moves):
        move = None
        for i, j in itertools.permutations(range(K), 2):
            if counts[i] == 0:
                continue
            trial = counts.copy()
            trial[i] -= 1
            trial[j] += 1
            f, _ = _position_variance(fims, trial.astype(float))
            if f < best * (1 - 1e-12) or (np.isinf(best) and np.isfinite(f)):
                best, move = f, trial
        if move is None:
            break
        counts = move
    if not np.isfinite(best):
        raise UnlocalizableError("no time-sharing split of T slots gives an invertible FIM")
    return counts


def _realize(omega_ideal, table, realization, array, p_ue, p_bs, grid_kwargs):
    if table is None or table.kind == UNIT_CIRCLE:
        return omega_ideal
    if realization == "project":
        return project(omega_ideal, table)
    if realization == "synthesize":
        grid = synthesis.default_slice_grid(geometry.cart_to_sph(np.asarray(p_ue) - array.center), **grid_kwargs)
        return synthesis.synthesize_reduced(omega_ideal, grid, array, table, p_tx=p_bs, joint_scale=True).omega
    raise ValueError(f"unknown realization {realization!r}")


def beam_profiles(basis: BeamBasis, table, array: RisArray, p_bs, *, realization="project",
                  p_ue=None, grid_kwargs=None) -> np.ndarray:
    """Per-beam RIS profiles ``(M, 4)``: ``U_ortho[:, k] / a(p_bs)``, then made feasible.

    Ideal beams are kept as-is for ``table=None`` and for the unit-circle table;
    discrete tables either project (``"project"``) or run the reduced synthesis
    toward the ideal beam pattern (``"synthesize"``, needs ``p_ue``).
    """
    a_bs = geometry.steering_vector(array, p_bs)
    ideal = basis.U_ortho / a_bs[:, None]
    return np.column_stack([
        _realize(ideal[:, k], table, realization, array, p_ue, p_bs, grid_kwargs or {})
        for k in range(ideal.shape[1])
    ])


def time_sharing_precoder(basis: BeamBasis, allocation: PowerAllocation, table, array: RisArray, p_bs,
                          T: int | None = None, counts=None, **kwargs) -> Precoder:
    """Transmit beam ``k`` in ``count_k`` consecutive slots.

    ``counts`` defaults to largest-remainder rounding of the allocation; pass
    the output of :func:`time_sharing_counts` to guard against singular splits.
    """
    T = int(round(allocation.total)) if T is None else T
    if counts is None:
        counts = largest_remainder_counts(allocation.weights, T)
    counts = np.asarray(counts, dtype=int)
    if counts.sum() != T:
        raise ValueError("slot counts must sum to T")
    profiles = beam_profiles(basis, table, array, p_bs, **kwargs)
    omegas = np.repeat(profiles, counts, axis=1)
    F = omegas * geometry.steering_vector(array, p_bs)[:, None]
    return Precoder(F, provenance=f"optimal counts={counts.tolist()}", profiles=omegas)


def random_profiles(table, array: RisArray, p_bs, T: int, rng: np.random.Generator) -> Precoder:
    """I.i.d. entries: uniform over a discrete table, uniform phase otherwise."""
    M = array.num_elements
    if table is None or table.kind == UNIT_CIRCLE:
        omegas = np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=(M, T)))
    else:
        omegas = table.values[rng.integers(0, len(table.values), size=(M, T))]
    F = omegas * geometry.steering_vector(array, p_bs)[:, None]
    return Precoder(F, provenance="random", profiles=omegas)


def sample_ball(center, radius: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform inside a ball."""
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, n) ** (1 / 3)
    return np.asarray(center, float) + d * r[:, None]


def directional_profiles(table, array: RisArray, p_bs, T: int, rng: np.random.Generator, *,
                         center, radius: float, per_trial: bool = False, max_retries: int = 100) -> Precoder:
    """Steering profiles ``conj(a(q_t) a(p_bs))`` toward points ``q_t`` drawn in the sphere.

    One point per transmission, or a single point reused for all ``T`` when
    ``per_trial`` is set.  Degenerate draws are resampled.
    """
    n = 1 if per_trial else T
    a_bs = geometry.steering_vector(array, p_bs)
    rows = []
    for _ in range(n):
        for _attempt in range(max_retries):
            q = sample_ball(center, radius, 1, rng)[0]
            try:
                rows.append(geometry.steering_vector(array, q))
                break
            except GeometryError:
                continue
        else:
            raise GeometryError("could not draw a non-degenerate point in the uncertainty sphere")
    A = np.array(rows).T
    if per_trial:
        A = np.repeat(A, T, axis=1)
    omegas = np.conj(A * a_bs[:, None])
    if table is not None and table.kind != UNIT_CIRCLE:
        omegas = project(omegas, table)
    return Precoder(omegas * a_bs[:, None], provenance="directional", profiles=omegas)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per Monte-Carlo trial, reproducible from ``(seed, trial)``."""
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def optimal_precoder(array: RisArray, table, channel: ChannelState, config: SignalConfig, *,
                     realization: str = "synthesize", reoptimize: bool = False) -> Precoder:
    """Localization-optimal time-sharing precoder for a known UE position.

    The allocation is optimised on the ideal beams; the beams are then made
    feasible for ``table``.  With ``reoptimize`` the allocation is recomputed
    on the FIMs of the feasible beams.
    """
    T = config.num_transmissions
    basis = build_beam_basis(array, channel.p_ue)
    fims = per_beam_fims(basis, array, channel, config)
    profiles = beam_profiles(basis, table, array, channel.p_bs, realization=realization, p_ue=channel.p_ue)
    if reoptimize and table is not None and table.kind != UNIT_CIRCLE:
        a_bs = geometry.steering_vector(array, channel.p_bs)
        fims = np.stack([single_transmission_fim(array, profiles[:, k] * a_bs, channel, config)
                         for k in range(profiles.shape[1])])
    allocation = optimize_allocation(fims, T)
    counts = time_sharing_counts(fims, allocation, T)
    omegas = np.repeat(profiles, counts, axis=1)
    F = omegas * geometry.steering_vector(array, channel.p_bs)[:, None]
    return Precoder(F, provenance=f"optimal counts={counts.tolist()}", profiles=omegas)


def design_peb(spec: DesignSpec, array: RisArray, channel: ChannelState, config: SignalConfig, *,
               realization: str = "synthesize", reoptimize: bool = False) -> float:
    """PEB of a design; Monte-Carlo designs return the mean over ``spec.mc_trials`` trials."""

    T = config.num_transmissions
    if spec.kind == "optimal":
        P = optimal_precoder(array, spec.table, channel, config, realization=realization, reoptimize=reoptimize)
        return compute_peb(array, P, channel, config).peb_meters
    center = channel.p_ue if spec.prior_center is None else spec.prior_center
    total = 0.0
    for trial in range(spec.mc_trials):
        rng = trial_rng(spec.seed, trial)
        if spec.kind == "random":
            P = random_profiles(spec.table, array, channel.p_bs, T, rng)
        else:
            P = directional_profiles(spec.table, array, channel.p_bs, T, rng, center=center,
                                     radius=spec.sphere_radius, per_trial=spec.per_trial_direction)
        total += compute_peb(array, P, channel, config).peb_meters
    return total / spec.mc_trials
