"""Cell-centred finite differences for -div(a grad u) = f with u = 0 on the boundary.

Unknowns sit at cell centres. Interior faces use the harmonic mean of the two
adjacent coefficients; a boundary face sees the Dirichlet value at distance
h/2, which contributes 2 a / h^2 to the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import UNIT_SQUARE, Bounds, GridField


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class EllipticOperator:
    """Matrix-free 5-point operator; ``cx``/``cy`` are face conductances already divided by h^2."""

    cx: np.ndarray  # [N, N-1] faces between columns
    cy: np.ndarray  # [N-1, N] faces between rows
    diag: np.ndarray

    @classmethod
    def build(cls, a: np.ndarray, h: float) -> "EllipticOperator":
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"coefficient must be a square 2D grid, got shape {a.shape}")
        if not np.all(a > 0):
            raise ValueError(f"coefficient must be positive, min is {a.min()}")
        inv_h2 = 1.0 / (h * h)
        cx = 2.0 * a[:, 1:] * a[:, :-1] / (a[:, 1:] + a[:, :-1]) * inv_h2
        cy = 2.0 * a[1:, :] * a[:-1, :] / (a[1:, :] + a[:-1, :]) * inv_h2
        diag = np.zeros_like(a)
        diag[:, 1:] += cx
        diag[:, :-1] += cx
        diag[1:, :] += cy
        diag[:-1, :] += cy
        edge = 2.0 * a * inv_h2
        diag[:, 0] += edge[:, 0]
        diag[:, -1] += edge[:, -1]
        diag[0, :] += edge[0, :]
        diag[-1, :] += edge[-1, :]
        return cls(cx, cy, diag)

    def apply(self, u: np.ndarray) -> np.ndarray:
        out = self.diag * u
        out[:, :-1] -= self.cx * u[:, 1:]
        out[:, 1:] -= self.cx * u[:, :-1]
        out[:-1, :] -= self.cy * u[1:, :]
        out[1:, :] -= self.cy * u[:-1, :]
        return out


def pcg(op: EllipticOperator, b: np.ndarray, tol: float = 1e-8, max_iter: int | None = None):
    """Jacobi-preconditioned conjugate gradient; returns (x, relative residual, iterations)."""
    if max_iter is None:
        max_iter = 20 * b.size
    inv_d = 1.0 / op.diag
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, 0.0, 0
    z = inv_d * r
    p = z.copy()
    rz = np.vdot(r, z)
    for it in range(1, max_iter + 1):
        Ap = op.apply(p)
        alpha = rz / np.vdot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res < tol:
            return x, res, it
        z = inv_d * r
        rz_new = np.vdot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise SolverError(f"CG did not reach tol {tol:g} in {max_iter} iterations (residual {res:.3e})", res, max_iter)


def solve_elliptic_fd(a, f=None, tol: float = 1e-8, bounds: Bounds | None = None,
                      max_iter: int | None = None) -> GridField:
    """Solve on the square domain of ``a`` (a GridField or array plus ``bounds``); f defaults to 1."""
    if isinstance(a, GridField):
        bounds = a.bounds if bounds is None else bounds
        a = a.values[0]
    bounds = UNIT_SQUARE if bounds is None else bounds
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[-1]
    (x_lo, x_hi), (y_lo, y_hi) = bounds
    if not np.isclose(x_hi - x_lo, y_hi - y_lo):
        raise ValueError("solver expects a square domain")
    h = (x_hi - x_lo) / n
    op = EllipticOperator.build(a, h)
    if f is None:
        rhs = np.ones_like(a)
    else:
        rhs = np.asarray(f.values[0] if isinstance(f, GridField) else f, dtype=np.float64)
        rhs = np.broadcast_to(rhs, a.shape).copy()
    u, _, _ = pcg(op, rhs, tol, max_iter)
    return GridField(u, bounds)


def residual_norm(a: np.ndarray, u: np.ndarray, f: np.ndarray, h: float) -> float:
    """Relative residual ||f - A u|| / ||f|| of the discrete system."""
    op = EllipticOperator.build(a, h)
    return float(np.linalg.norm(f - op.apply(u)) / np.linalg.norm(f))
