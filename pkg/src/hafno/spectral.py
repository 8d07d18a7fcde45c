"""Radix-2 FFTs, mode truncation and the learnable frequency-domain kernel.

Conventions: the forward 2D transform is unnormalized, the inverse carries the
1/(H*W) factor. Real transforms keep the non-negative half of the last axis
(``W // 2 + 1`` columns). A truncated ("compact") spectrum keeps rows
``0..m1-1`` followed by ``H-m1..H-1`` and columns ``0..m2-1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import DiffNode, ShapeError, _make, leaf


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(half: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(half) / (2 * half))


def fft(x, axis: int = -1, inverse: bool = False) -> np.ndarray:
    """Iterative decimation-in-time Cooley-Tukey FFT along one axis.

    The inverse includes the 1/n normalization.
    """
    x = np.asarray(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    if not is_pow2(n):
        raise ShapeError(f"radix-2 FFT needs a power-of-two length, got {n}")
    pre = int(np.prod(x.shape[:axis], dtype=np.int64))
    post = int(np.prod(x.shape[axis + 1:], dtype=np.int64))
    v = np.take(x.reshape(pre, n, post), _bitrev(n), axis=1).astype(np.complex128, copy=False)
    half = 1
    while half < n:
        v = v.reshape(pre, n // (2 * half), 2, half, post)
        e = v[:, :, 0]
        t = v[:, :, 1] if half == 1 else v[:, :, 1] * _twiddles(half, inverse)[:, None]
        out = np.empty((pre, n // (2 * half), 2, half, post), dtype=np.complex128)
        np.add(e, t, out=out[:, :, 0])
        np.subtract(e, t, out=out[:, :, 1])
        v = out
        half *= 2
    v = v.reshape(x.shape)
    if inverse:
        v /= n
    return v


@lru_cache(maxsize=None)
def _rfft_phase(n: int, inverse: bool) -> np.ndarray:
    sign = 1.0 if inverse else -1.0
    return np.exp(sign * 2j * np.pi * np.arange(n // 2 + 1) / n)


def rfft(x) -> np.ndarray:
    """Real FFT along the last axis via one half-length complex FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ShapeError("rfft needs length >= 2")
    m = n // 2
    Z = fft(x[..., 0::2] + 1j * x[..., 1::2])
    k = np.arange(m + 1)
    Zk = Z[..., k % m]
    Zc = np.conj(Z[..., (m - k) % m])
    even = 0.5 * (Zk + Zc)
    odd = -0.5j * (Zk - Zc)
    return even + _rfft_phase(n, False) * odd


def irfft(X, n: int) -> np.ndarray:
    """Inverse of :func:`rfft`; returns Re((1/n) sum_k c_k X_k e^{+2pi i k t/n}).

    c_k is 1 for the DC and Nyquist columns and 2 otherwise, so imaginary parts
    of those two columns are discarded.
    """
    X = np.asarray(X, dtype=np.complex128)
    m = n // 2
    if X.shape[-1] != m + 1:
        raise ShapeError(f"irfft: expected {m + 1} coefficients for length {n}, got {X.shape[-1]}")
    X = X.copy()
    X[..., 0] = X[..., 0].real
    X[..., m] = X[..., m].real
    k = np.arange(m)
    Xk = X[..., k]
    Xc = np.conj(X[..., m - k])
    even = 0.5 * (Xk + Xc)
    odd = 0.5 * (Xk - Xc) * _rfft_phase(n, True)[:m]
    z = fft(even + 1j * odd, inverse=True)
    out = np.empty((*X.shape[:-1], n))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


@dataclass
class Spectrum:
    """Complex coefficients in real-FFT layout ``[..., H, W//2+1]`` (or compact ``[..., 2*m1, m2]``)."""

    coeffs: np.ndarray
    spatial_dims: tuple[int, int]


def _check_grid(H: int, W: int) -> None:
    if H < 2 or W < 2:
        raise ShapeError(f"grid must be at least 2x2, got {(H, W)}")
    if not (is_pow2(H) and is_pow2(W)):
        raise ShapeError(f"grid {(H, W)} is not power-of-two; pad it first")


def rfft2(x) -> Spectrum:
    x = np.asarray(x, dtype=np.float64)
    H, W = x.shape[-2:]
    _check_grid(H, W)
    return Spectrum(fft(rfft(x), axis=-2), (H, W))


def irfft2(s: Spectrum) -> np.ndarray:
    H, W = s.spatial_dims
    if s.coeffs.shape[-2:] != (H, W // 2 + 1):
        raise ShapeError(f"irfft2: coefficients {s.coeffs.shape[-2:]} inconsistent with grid {(H, W)}")
    return irfft(fft(s.coeffs, axis=-2, inverse=True), W)


def fft2(x) -> np.ndarray:
    """Full complex 2D spectrum ``[..., H, W]``."""
    return fft(fft(np.asarray(x), axis=-1), axis=-2)


def half_to_full(s: Spectrum) -> np.ndarray:
    """Rebuild the full spectrum of a real field from its half layout via conjugate symmetry."""
    H, W = s.spatial_dims
    half = s.coeffs
    full = np.empty((*half.shape[:-1], W), dtype=np.complex128)
    full[..., : W // 2 + 1] = half
    rows = (-np.arange(H)) % H
    cols = np.arange(W // 2 + 1, W)
    full[..., cols] = np.conj(half[..., rows, :][..., (W - cols)])
    return full


def mode_weights(W: int, m2: int | None = None) -> np.ndarray:
    """Multiplicity of each stored column in the full spectrum (1 for DC/Nyquist, else 2)."""
    n = W // 2 + 1 if m2 is None else m2
    c = np.full(n, 2.0)
    c[0] = 1.0
    if n > W // 2:
        c[W // 2] = 1.0
    return c


def kept_rows(H: int, m1: int) -> np.ndarray:
    return np.concatenate([np.arange(m1), np.arange(H - m1, H)])


def _check_modes(H: int, W: int, m1: int, m2: int) -> None:
    if m1 < 1 or m2 < 1:
        raise ShapeError(f"mode cut must be positive, got {(m1, m2)}")
    if m1 > H // 2 or m2 > W // 2 + 1:
        raise ShapeError(f"mode cut {(m1, m2)} exceeds Nyquist of grid {(H, W)}")


def truncate_modes(s: Spectrum, m1: int, m2: int) -> Spectrum:
    H, W = s.spatial_dims
    _check_modes(H, W, m1, m2)
    return Spectrum(s.coeffs[..., kept_rows(H, m1), :m2], (H, W))


def pad_modes(s: Spectrum) -> Spectrum:
    """Zero-fill a compact spectrum back to the full real-FFT layout."""
    H, W = s.spatial_dims
    m1, m2 = s.coeffs.shape[-2] // 2, s.coeffs.shape[-1]
    _check_modes(H, W, m1, m2)
    full = np.zeros((*s.coeffs.shape[:-2], H, W // 2 + 1), dtype=np.complex128)
    full[..., kept_rows(H, m1), :m2] = s.coeffs
    return Spectrum(full, (H, W))


def spectral_multiply(s: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-mode channel mixing: out[..., o, k] = sum_i weights[k, i, o] * s[..., i, k].

    ``s`` is a compact spectrum ``[..., C_in, M1, M2]``; ``weights`` is ``[M1, M2, C_in, C_out]``.
    """
    M1, M2, ci, co = weights.shape
    if s.shape[-3:] != (ci, M1, M2):
        raise ShapeError(f"spectral_multiply: spectrum {s.shape[-3:]} vs kernel {(ci, M1, M2)}")
    lead = s.shape[:-3]
    sm = np.moveaxis(s.reshape(-1, ci, M1 * M2), -1, 0)  # [M, B, ci]
    out = np.matmul(sm, weights.reshape(M1 * M2, ci, co))  # [M, B, co]
    return np.moveaxis(out, 0, -1).reshape(*lead, co, M1, M2)


@dataclass
class SpectralKernel:
    """Learnable complex weights on the kept modes, stored as real and imaginary leaves."""

    re: DiffNode
    im: DiffNode

    @property
    def mode_cut(self) -> tuple[int, int]:
        M1, M2 = self.re.shape[:2]
        return M1 // 2, M2

    @property
    def channels(self) -> tuple[int, int]:
        return self.re.shape[2], self.re.shape[3]

    def complex_weights(self) -> np.ndarray:
        return self.re.value + 1j * self.im.value

    @classmethod
    def init(cls, c_in: int, c_out: int, m1: int, m2: int, rng: np.random.Generator) -> "SpectralKernel":
        bound = 1.0 / (c_in * c_out) / np.sqrt(m1 * m2)
        shape = (2 * m1, m2, c_in, c_out)
        return cls(leaf(rng.uniform(-bound, bound, shape)), leaf(rng.uniform(-bound, bound, shape)))

    @classmethod
    def identity(cls, c: int, m1: int, m2: int) -> "SpectralKernel":
        re = np.zeros((2 * m1, m2, c, c))
        re[:, :, np.arange(c), np.arange(c)] = 1.0
        return cls(leaf(re), leaf(np.zeros_like(re)))


def hermitian_mask(H: int, W: int, m1: int, m2: int) -> np.ndarray:
    """1/0 mask over compact modes that keeps a real output inside the kept set.

    When m1 < H/2 the row H-m1 has no mirror partner among kept rows, so its
    self-conjugate columns (DC and Nyquist) are dropped.
    """
    mask = np.ones((2 * m1, m2))
    if m1 < H // 2:
        mask[m1, 0] = 0.0
        if m2 > W // 2:
            mask[m1, W // 2] = 0.0
    return mask


def _forward_compact(x: np.ndarray, m1: int, m2: int) -> np.ndarray:
    """truncate_modes(rfft2(x)) without transforming columns that are discarded."""
    H = x.shape[-2]
    cols = rfft(x)[..., :m2]
    return fft(cols, axis=-2)[..., kept_rows(H, m1), :]


def _inverse_compact(y: np.ndarray, H: int, W: int) -> np.ndarray:
    """irfft2(pad_modes(y)) for a compact spectrum."""
    m1, m2 = y.shape[-2] // 2, y.shape[-1]
    rows = np.zeros((*y.shape[:-2], H, m2), dtype=np.complex128)
    rows[..., kept_rows(H, m1), :] = y
    cols = fft(rows, axis=-2, inverse=True)
    full = np.zeros((*y.shape[:-2], H, W // 2 + 1), dtype=np.complex128)
    full[..., :m2] = cols
    return irfft(full, W)


def fourier_unit(v: DiffNode, R: SpectralKernel) -> DiffNode:
    """Band-limited spectral convolution: irfft2(pad(R * truncate(rfft2(v))))."""
    xv = v.value
    H, W = xv.shape[-2:]
    _check_grid(H, W)
    m1, m2 = R.mode_cut
    _check_modes(H, W, m1, m2)
    ci, co = R.channels
    if xv.shape[-3] != ci:
        raise ShapeError(f"fourier_unit: input has {xv.shape[-3]} channels, kernel expects {ci}")
    mask = hermitian_mask(H, W, m1, m2)
    Rc = R.complex_weights() * mask[:, :, None, None]
    X = _forward_compact(xv, m1, m2)
    out = _inverse_compact(spectral_multiply(X, Rc), H, W)
    c = mode_weights(W, m2)

    def bw(g):
        gY = _forward_compact(g, m1, m2) * (mask * c / (H * W))
        lead = gY.shape[:-3]
        Xf = np.conj(X).reshape(-1, ci, 2 * m1 * m2)
        Gf = gY.reshape(-1, co, 2 * m1 * m2)
        gR = np.einsum("bik,bok->kio", Xf, Gf).reshape(2 * m1, m2, ci, co)
        gX = np.einsum("kio,bok->bik", np.conj(Rc).reshape(-1, ci, co), Gf)
        gX = gX.reshape(*lead, ci, 2 * m1, m2) / c
        gv = _inverse_compact(gX, H, W) * (H * W)
        return gv, gR.real, gR.imag

    return _make(out, (v, R.re, R.im), bw, "fourier_unit")
