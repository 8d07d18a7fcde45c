"""Coefficient samplers for the elliptic benchmarks and the vorticity initial condition."""

from __future__ import annotations

import numpy as np

from .fields import SYMMETRIC_SQUARE, UNIT_SQUARE, GridField, cell_centers, mesh


def trig_frequencies(rng: np.random.Generator) -> np.ndarray:
    """a_k ~ U[2^(k-1), 1.5 * 2^(k-1)] for k = 1..6."""
    lo = 2.0 ** np.arange(6)
    return rng.uniform(lo, 1.5 * lo)


def trig_coefficient_from(ak, resolution: int) -> GridField:
    """prod_k (1 + cos(a_k pi (x1 + x2)) / 2) (1 + sin(a_k pi (x2 - 3 x1)) / 2) on [-1, 1]^2."""
    x1, x2 = mesh(resolution, SYMMETRIC_SQUARE)
    a = np.ones_like(x1)
    for f in np.asarray(ak, dtype=np.float64):
        a *= (1.0 + 0.5 * np.cos(f * np.pi * (x1 + x2))) * (1.0 + 0.5 * np.sin(f * np.pi * (x2 - 3.0 * x1)))
    return GridField(a, SYMMETRIC_SQUARE)


def gen_trig_coefficient(seed: int, resolution: int) -> GridField:
    if resolution < 16:
        raise ValueError(f"resolution must be >= 16, got {resolution}")
    return trig_coefficient_from(trig_frequencies(np.random.default_rng(seed)), resolution)


def neumann_std(n_modes: int, c: float) -> np.ndarray:
    """Coefficient std (pi^2 (j^2 + k^2) + c)^-1 of N(0, (-Laplace + c)^-2) in the cosine basis."""
    j = np.arange(n_modes)
    return 1.0 / (np.pi ** 2 * (j[:, None] ** 2 + j[None, :] ** 2) + c)


def cosine_basis(n_modes: int, resolution: int) -> np.ndarray:
    """L2-orthonormal Neumann eigenfunctions sqrt(2) cos(j pi x) (1 for j = 0) at cell centres."""
    x = cell_centers(resolution, 0.0, 1.0)
    B = np.sqrt(2.0) * np.cos(np.pi * np.arange(n_modes)[:, None] * x[None, :])
    B[0] = 1.0
    return B


def sample_grf_neumann(rng: np.random.Generator, resolution: int, c: float,
                       n_modes: int | None = None) -> np.ndarray:
    """g = sum_jk xi_jk (pi^2 (j^2 + k^2) + c)^-1 phi_j(x2) phi_k(x1) on [0, 1]^2.

    Row index j pairs with x2 (axis -2) and column index k with x1.
    """
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    m = resolution if n_modes is None else n_modes
    B = cosine_basis(m, resolution)
    xi = rng.standard_normal((m, m)) * neumann_std(m, c)
    return B.T @ xi @ B


def sample_grf_twophase(seed: int, resolution: int, c: float = 9.0, a_min: float = 3.0,
                        a_max: float = 12.0) -> GridField:
    if not a_max > a_min > 0:
        raise ValueError(f"need a_max > a_min > 0, got a_min={a_min}, a_max={a_max}")
    g = sample_grf_neumann(np.random.default_rng(seed), resolution, c)
    return GridField(np.where(g >= 0, a_max, a_min), UNIT_SQUARE)


def sample_lognormal(seed: int, resolution: int, c: float = 9.0, scale: float = 4.0) -> GridField:
    """Smooth coefficient exp(scale * g) from the same Gaussian family."""
    g = sample_grf_neumann(np.random.default_rng(seed), resolution, c)
    return GridField(np.exp(scale * g), UNIT_SQUARE)


def periodic_std(resolution: int, c: float) -> np.ndarray:
    """Per-mode std (4 pi^2 |k|^2 + c)^-1 on the unit torus in ``numpy.fft.fft2`` layout, mean mode zero."""
    k = np.fft.fftfreq(resolution, 1.0 / resolution)
    s = 1.0 / (4.0 * np.pi ** 2 * (k[:, None] ** 2 + k[None, :] ** 2) + c)
    s[0, 0] = 0.0
    return s


def sample_grf_periodic(rng: np.random.Generator, resolution: int, c: float, scale: float) -> np.ndarray:
    """Mean-zero stationary field on the torus whose Fourier coefficients have std scale * periodic_std."""
    z = rng.standard_normal((resolution, resolution))
    zh = np.fft.fft2(z) * (scale * periodic_std(resolution, c))
    return resolution * np.fft.ifft2(zh).real
