"""Pseudo-spectral vorticity solver on the unit torus.

Crank-Nicolson for viscosity, Heun (explicit trapezoid) for advection and
forcing, 2/3-rule dealiasing of the advection term. Transforms use
``numpy.fft`` so the solver stays independent of the model's own FFT.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CFLError(RuntimeError):
    pass


@dataclass(frozen=True)
class NSSpec:
    nu: float = 1e-3
    resolution: int = 64
    dt: float = 1e-3
    record_interval: float = 1.0
    T0: int = 10
    T: int = 50
    forcing_amplitude: float = 0.1
    w0_scale: float = 25.0
    w0_c: float = 49.0
    cfl_max: float = 0.5
    dt_min: float = 1e-6

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        if self.T <= self.T0:
            raise ValueError(f"horizon T={self.T} must exceed the conditioning length T0={self.T0}")
        if self.resolution < 8 or self.resolution % 2:
            raise ValueError(f"resolution must be even and >= 8, got {self.resolution}")


def torus_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.arange(n) / n
    return np.meshgrid(x, x, indexing="xy")


def default_forcing(n: int, amplitude: float = 0.1) -> np.ndarray:
    x1, x2 = torus_grid(n)
    s = 2.0 * np.pi * (x1 + x2)
    return amplitude * (np.sin(s) + np.cos(s))


class SpectralGrid:
    """Wavenumbers and masks for ``rfft2`` layout on an n x n torus."""

    def __init__(self, n: int):
        self.n = n
        self.ky = np.fft.fftfreq(n, 1.0 / n)[:, None]
        self.kx = np.fft.rfftfreq(n, 1.0 / n)[None, :]
        self.k2 = 4.0 * np.pi ** 2 * (self.kx ** 2 + self.ky ** 2)
        inv = np.zeros_like(self.k2)
        inv[self.k2 > 0] = 1.0 / self.k2[self.k2 > 0]
        self.inv_k2 = inv
        cut = n / 3.0
        self.dealias = ((np.abs(self.kx) <= cut) & (np.abs(self.ky) <= cut)).astype(np.float64)

    def velocity_hat(self, w_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """u = d psi/dx2, v = -d psi/dx1 with -Laplace psi = w."""
        psi = w_hat * self.inv_k2
        return 2j * np.pi * self.ky * psi, -2j * np.pi * self.kx * psi

    def divergence_hat(self, u_hat: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
        return 2j * np.pi * (self.kx * u_hat + self.ky * v_hat)

    def advection_hat(self, w_hat: np.ndarray) -> tuple[np.ndarray, float]:
        """Dealiased transform of u . grad w, plus the max speed for the CFL check."""
        n = self.n
        u_hat, v_hat = self.velocity_hat(w_hat)
        u = np.fft.irfft2(u_hat, s=(n, n))
        v = np.fft.irfft2(v_hat, s=(n, n))
        wx = np.fft.irfft2(2j * np.pi * self.kx * w_hat, s=(n, n))
        wy = np.fft.irfft2(2j * np.pi * self.ky * w_hat, s=(n, n))
        adv = np.fft.rfft2(u * wx + v * wy) * self.dealias
        # u . grad w = div(u w) has zero mean; drop the round-off in the mean mode
        adv[0, 0] = 0.0
        return adv, float(np.sqrt(np.max(u * u + v * v)))


def _advance(w_hat, grid: SpectralGrid, f_hat, nu: float, dt: float, n_steps: int, cfl_max: float):
    h = 1.0 / grid.n
    half = 0.5 * dt * nu * grid.k2
    lhs = 1.0 / (1.0 + half)
    rhs = 1.0 - half
    for _ in range(n_steps):
        adv, speed = grid.advection_hat(w_hat)
        cfl = dt * speed / h
        if cfl > cfl_max:
            return None, cfl
        n1 = f_hat - adv
        w_star = (rhs * w_hat + dt * n1) * lhs
        adv2, _ = grid.advection_hat(w_star)
        w_hat = (rhs * w_hat + 0.5 * dt * (n1 + f_hat - adv2)) * lhs
    return w_hat, 0.0


def solve_ns_vorticity(w0: np.ndarray, spec: NSSpec, forcing: np.ndarray | None = None,
                       n_frames: int | None = None) -> np.ndarray:
    """Frames at t = 1, 2, ... (in record_interval units); returns [n_frames, n, n].

    Each interval is integrated with ``dt`` halved until the CFL number stays
    below ``cfl_max``; below ``dt_min`` the run is aborted.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    n = w0.shape[-1]
    if w0.shape != (n, n):
        raise ValueError(f"w0 must be square, got {w0.shape}")
    mean = float(w0.mean())
    if abs(mean) > 1e-10 * max(1.0, float(np.abs(w0).max())):
        raise ValueError(f"w0 must have zero mean on the torus, mean is {mean:.3e}")
    f = default_forcing(n, spec.forcing_amplitude) if forcing is None else np.asarray(forcing, dtype=np.float64)
    grid = SpectralGrid(n)
    f_hat = np.fft.rfft2(f)
    w_hat = np.fft.rfft2(w0)
    frames = spec.T if n_frames is None else n_frames
    out = np.empty((frames, n, n))
    base_steps = max(1, int(round(spec.record_interval / spec.dt)))
    for t in range(frames):
        steps = base_steps
        cfl = 0.0
        while True:
            dt = spec.record_interval / steps
            if dt < spec.dt_min:
                raise CFLError(f"CFL {cfl:.3f} > {spec.cfl_max} at frame {t + 1} even with dt={dt:.2e}")
            new, cfl = _advance(w_hat, grid, f_hat, spec.nu, dt, steps, spec.cfl_max)
            if new is not None:
                w_hat = new
                break
            steps *= 2
        out[t] = np.fft.irfft2(w_hat, s=(n, n))
    return out


def enstrophy(w: np.ndarray) -> np.ndarray:
    """Sum of w^2 over the grid, per frame."""
    return np.sum(np.asarray(w) ** 2, axis=(-2, -1))
