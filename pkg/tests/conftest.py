import itertools

import numpy as np
import pytest

from beamlab.geometry import RisArray

CARRIER = 28e9
P_TX = np.array([3.0, 3.0, 0.0])
P_DES = np.array([0.0, 2.0, 0.0])


@pytest.fixture(scope="session")
def array32():
    return RisArray.half_wavelength(32, 32, CARRIER)


@pytest.fixture(scope="session")
def array8x8():
    return RisArray.half_wavelength(8, 8, CARRIER)


@pytest.fixture(scope="session")
def array2x4():
    return RisArray.half_wavelength(2, 4, CARRIER)


def five_point(f, x, h):
    """Fourth-order central difference of ``f`` at ``x``."""
    return (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)


def random_point(rng, rho=(0.5, 10.0), margin=0.1):
    return np.array([
        rng.uniform(*rho),
        rng.uniform(margin, np.pi - margin),
        rng.uniform(margin, np.pi - margin),
    ])


def simplex_grid_best(fims, T, steps=100):
    """Brute-force PEB minimum over allocations on a ``T / steps`` grid of the 4-simplex."""
    fims = np.asarray(fims, dtype=float)
    K = fims.shape[0]
    # compositions of ``steps`` into K nonnegative parts via stars and bars
    bars = np.array(list(itertools.combinations(range(steps + K - 1), K - 1)))
    edges = np.column_stack([np.full(len(bars), -1), bars, np.full(len(bars), steps + K - 1)])
    counts = np.diff(edges, axis=1) - 1
    lam = counts * (T / steps)
    J = np.einsum("nk,kij->nij", lam, fims)
    d = np.sqrt(np.einsum("nii->ni", J))
    ok = np.all(d > 0, axis=1)
    Jn = J[ok] / d[ok][:, :, None] / d[ok][:, None, :]
    w = np.linalg.eigvalsh(Jn)
    good = w[:, 0] > 1e-12 * w[:, -1]
    inv = np.linalg.inv(Jn[good]) / d[ok][good][:, :, None] / d[ok][good][:, None, :]
    pebs = np.sqrt(np.einsum("nii->n", inv[:, :3, :3]))
    best = int(np.argmin(pebs))
    return float(pebs[best]), lam[ok][good][best]


def random_fims(rng, K=4, n=5):
    """Rank-two PSD matrices ``Re(d d^H)`` with badly scaled parameters, like per-beam FIMs."""
    scale = 10 ** rng.uniform(-2, 2, size=n)
    out = []
    for _ in range(K):
        d = (rng.normal(size=n) + 1j * rng.normal(size=n)) * scale
        out.append(np.real(np.outer(d.conj(), d)) * 10 ** rng.uniform(-1, 1))
    return np.array(out)
