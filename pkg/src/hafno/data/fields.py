"""Grid fields on cell-centred uniform grids, resampling and noise.

Axis -1 runs along x1 and axis -2 along x2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Bounds = tuple[tuple[float, float], tuple[float, float]]
UNIT_SQUARE: Bounds = ((0.0, 1.0), (0.0, 1.0))
SYMMETRIC_SQUARE: Bounds = ((-1.0, 1.0), (-1.0, 1.0))


@dataclass
class GridField:
    """Real multi-channel field ``values[C, H, W]`` with ``bounds = ((x1_lo, x1_hi), (x2_lo, x2_hi))``."""

    values: np.ndarray
    bounds: Bounds = UNIT_SQUARE

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise ValueError(f"GridField needs [C, H, W] values, got shape {v.shape}")
        self.values = v

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape[-2], self.values.shape[-1]

    @property
    def spacing(self) -> tuple[float, float]:
        (a, b), (c, d) = self.bounds
        H, W = self.resolution
        return (b - a) / W, (d - c) / H


def cell_centers(n: int, lo: float, hi: float) -> np.ndarray:
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def mesh(n: int, bounds: Bounds) -> tuple[np.ndarray, np.ndarray]:
    """(x1, x2) arrays of shape [n, n] at cell centres."""
    x1 = cell_centers(n, *bounds[0])
    x2 = cell_centers(n, *bounds[1])
    return np.meshgrid(x1, x2, indexing="xy")


def _interp_matrix(n_src: int, n_dst: int) -> np.ndarray:
    """Linear interpolation from source to target cell centres, edges clamped."""
    pos = (np.arange(n_dst) + 0.5) * n_src / n_dst - 0.5
    pos = np.clip(pos, 0.0, n_src - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_src - 1)
    hi = np.minimum(lo + 1, n_src - 1)
    t = pos - lo
    M = np.zeros((n_dst, n_src))
    M[np.arange(n_dst), lo] += 1.0 - t
    M[np.arange(n_dst), hi] += t
    return M


def downsample_field(x, target: int | tuple[int, int]):
    """Bilinear resampling to a coarser cell-centred grid over the same domain."""
    field = x if isinstance(x, GridField) else GridField(x)
    H, W = field.resolution
    th, tw = (target, target) if isinstance(target, int) else target
    if th > H or tw > W:
        raise ValueError(f"downsample_field: target {(th, tw)} exceeds source {(H, W)}")
    if (th, tw) == (H, W):
        out = field.values.copy()
    else:
        out = _interp_matrix(H, th) @ field.values @ _interp_matrix(W, tw).T
    if isinstance(x, GridField):
        return GridField(out, field.bounds)
    return out if np.asarray(x).ndim == 3 else out[0]


def add_noise(u, eps: float, seed: int):
    """u + eps * std(u) * Z with Z standard normal (std taken over the whole field)."""
    if eps < 0:
        raise ValueError(f"noise level must be non-negative, got {eps}")
    vals = u.values if isinstance(u, GridField) else np.asarray(u, dtype=np.float64)
    if eps == 0:
        noisy = vals.copy()
    else:
        z = np.random.default_rng(seed).standard_normal(vals.shape)
        noisy = vals + eps * vals.std() * z
    return GridField(noisy, u.bounds) if isinstance(u, GridField) else noisy
