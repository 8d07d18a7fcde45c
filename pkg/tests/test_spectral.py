import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hafno import spectral
from hafno.core import ShapeError, leaf
from hafno.diagnostics import gradcheck
from hafno.spectral import (Spectrum, SpectralKernel, fourier_unit, irfft2, mode_weights, pad_modes, rfft2,
                            truncate_modes)

SIZES = [16, 64, 128]


def _grid(n):
    t = np.arange(n) / n
    return np.meshgrid(t, t, indexing="ij")  # (row coordinate, column coordinate)


@pytest.mark.parametrize("n", [2, 4, 8, 64, 256])
def test_fft_matches_numpy(n, rng):
    x = rng.standard_normal((3, n)) + 1j * rng.standard_normal((3, n))
    np.testing.assert_allclose(spectral.fft(x), np.fft.fft(x), atol=1e-11 * n)
    np.testing.assert_allclose(spectral.fft(x, inverse=True), np.fft.ifft(x), atol=1e-12)
    np.testing.assert_allclose(spectral.rfft(x.real), np.fft.rfft(x.real), atol=1e-11 * n)


def test_fft_along_middle_axis(rng):
    x = rng.standard_normal((2, 8, 3))
    np.testing.assert_allclose(spectral.fft(x, axis=1), np.fft.fft(x, axis=1), atol=1e-12)


def test_fft_rejects_non_power_of_two():
    with pytest.raises(ShapeError):
        spectral.fft(np.zeros(6))


@pytest.mark.parametrize("n", SIZES)
def test_round_trip_parseval_and_numpy_oracle(n, rng):
    x = rng.standard_normal((2, n, n))
    s = rfft2(x)
    np.testing.assert_allclose(s.coeffs, np.fft.rfft2(x), atol=1e-10)
    assert np.max(np.abs(irfft2(s) - x)) < 1e-10
    lhs = np.sum(x ** 2)
    rhs = np.sum(mode_weights(n)[None, None, :] * np.abs(s.coeffs) ** 2) / (n * n)
    assert abs(lhs - rhs) / lhs < 1e-12


@pytest.mark.parametrize("n", SIZES)
def test_linearity_and_shift_theorem(n, rng):
    x, y = rng.standard_normal((2, n, n))
    a, b = 1.3, -0.4
    assert np.max(np.abs(rfft2(a * x + b * y).coeffs - (a * rfft2(x).coeffs + b * rfft2(y).coeffs))) < 1e-10
    s = (3, n // 2 + 1)
    lhs = rfft2(np.roll(x, s, axis=(0, 1))).coeffs
    k1 = np.fft.fftfreq(n, 1 / n)[:, None]
    k2 = np.arange(n // 2 + 1)[None, :]
    rhs = np.exp(-2j * np.pi * (k1 * s[0] + k2 * s[1]) / n) * rfft2(x).coeffs
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_constant_and_single_harmonic():
    H, W = 8, 16
    s = rfft2(np.full((H, W), 2.5)).coeffs
    assert s[0, 0] == pytest.approx(2.5 * H * W)
    s[0, 0] = 0
    assert np.max(np.abs(s)) < 1e-12
    cols = np.arange(W) / W
    x = np.broadcast_to(np.cos(2 * np.pi * 3 * cols), (H, W))
    c = np.abs(rfft2(x).coeffs)
    assert c[0, 3] == pytest.approx(H * W / 2)
    c[0, 3] = 0
    assert c.max() < 1e-10


def test_inverse_of_mode_pair_is_cosine():
    H = W = 16
    coeffs = np.zeros((H, W // 2 + 1), dtype=complex)
    coeffs[1, 0] = coeffs[H - 1, 0] = H * W / 2
    rows, _ = _grid(H)
    np.testing.assert_allclose(irfft2(Spectrum(coeffs, (H, W))), np.cos(2 * np.pi * rows), atol=1e-12)
    zero = irfft2(Spectrum(np.zeros_like(coeffs), (H, W)))
    assert not zero.any()


def test_irfft2_rejects_inconsistent_dims():
    with pytest.raises(ShapeError):
        irfft2(Spectrum(np.zeros((8, 4), dtype=complex), (8, 8)))


def test_truncate_keeps_both_row_signs_and_pads_back(rng):
    x = rng.standard_normal((16, 16))
    s = rfft2(x)
    t = truncate_modes(s, 3, 4)
    assert t.coeffs.shape == (6, 4)
    np.testing.assert_array_equal(t.coeffs[:3], s.coeffs[:3, :4])
    np.testing.assert_array_equal(t.coeffs[3:], s.coeffs[13:, :4])
    p = pad_modes(t).coeffs
    mask = np.zeros(p.shape, dtype=bool)
    mask[[0, 1, 2, 13, 14, 15], :4] = True
    np.testing.assert_array_equal(p[mask], s.coeffs[mask])
    assert not p[~mask].any()


def test_truncate_constant_and_above_cut():
    n = 16
    s = truncate_modes(rfft2(np.full((n, n), 3.0)), 1, 1)
    assert s.coeffs[0, 0] == pytest.approx(3.0 * n * n)
    rows, _ = _grid(n)
    m1 = 3
    s = truncate_modes(rfft2(np.cos(2 * np.pi * (m1 + 1) * rows)), m1, 4)
    assert np.max(np.abs(s.coeffs)) < 1e-10


def test_truncate_rejects_cut_above_nyquist():
    s = rfft2(np.zeros((16, 16)))
    with pytest.raises(ShapeError):
        truncate_modes(s, 9, 4)
    with pytest.raises(ShapeError):
        truncate_modes(s, 4, 10)


def test_spectral_multiply_identity_zero_and_mismatch(rng):
    s = rng.standard_normal((3, 6, 4)) + 1j * rng.standard_normal((3, 6, 4))
    eye = np.zeros((6, 4, 3, 3), dtype=complex)
    eye[:, :, np.arange(3), np.arange(3)] = 1
    np.testing.assert_array_equal(spectral.spectral_multiply(s, eye), s)
    assert not spectral.spectral_multiply(s, np.zeros((6, 4, 3, 2))).any()
    with pytest.raises(ShapeError):
        spectral.spectral_multiply(s, np.zeros((6, 4, 2, 2)))


def test_spectral_multiply_per_mode_matvec(rng):
    s = rng.standard_normal((2, 4, 3)) + 1j * rng.standard_normal((2, 4, 3))
    R = rng.standard_normal((4, 3, 2, 5)) + 1j * rng.standard_normal((4, 3, 2, 5))
    out = spectral.spectral_multiply(s, R)
    for a in range(4):
        for b in range(3):
            np.testing.assert_allclose(out[:, a, b], R[a, b].T @ s[:, a, b], atol=1e-13)


@pytest.mark.parametrize("n,m1,m2", [(16, 4, 3), (16, 8, 5), (64, 12, 12), (32, 5, 17)])
def test_fourier_unit_band_limit(n, m1, m2, rng):
    x = rng.standard_normal((2, 3, n, n))
    R = SpectralKernel(leaf(rng.standard_normal((2 * m1, m2, 3, 4))), leaf(rng.standard_normal((2 * m1, m2, 3, 4))))
    y = fourier_unit(leaf(x), R).value
    assert y.shape == (2, 4, n, n)
    s = rfft2(y).coeffs
    outside = np.ones(s.shape[-2:], dtype=bool)
    outside[spectral.kept_rows(n, m1), :m2] = False
    total = np.sum(np.abs(s) ** 2)
    assert np.sum(np.abs(s[..., outside]) ** 2) < 1e-10 * total
    assert np.max(np.abs(s[..., outside])) < 1e-10


def test_fourier_unit_matches_numpy_pipeline(rng):
    n, m1, m2 = 16, 3, 4
    x = rng.standard_normal((2, n, n))
    R = SpectralKernel.init(2, 3, m1, m2, rng)
    W = R.complex_weights() * spectral.hermitian_mask(n, n, m1, m2)[:, :, None, None]
    X = np.fft.rfft2(x)[:, spectral.kept_rows(n, m1), :m2]
    Y = np.einsum("ikl,klio->okl", X, W)
    full = np.zeros((3, n, n // 2 + 1), dtype=complex)
    full[:, spectral.kept_rows(n, m1), :m2] = Y
    np.testing.assert_allclose(fourier_unit(leaf(x), R).value, np.fft.irfft2(full, s=(n, n)), atol=1e-12)


def test_fourier_unit_high_frequency_input_gives_zero():
    n = 32
    rows, cols = _grid(n)
    x = np.cos(2 * np.pi * (10 * rows + 3 * cols))[None]
    R = SpectralKernel.identity(1, 6, 6)
    assert np.max(np.abs(fourier_unit(leaf(x), R).value)) < 1e-12


def test_fourier_unit_identity_on_band_limited_input():
    n = 32
    rows, cols = _grid(n)
    x = (np.cos(2 * np.pi * (2 * rows + cols)) + 0.5 * np.sin(2 * np.pi * (3 * rows - 4 * cols)) + 0.1)[None]
    R = SpectralKernel.identity(1, 6, 6)
    np.testing.assert_allclose(fourier_unit(leaf(x), R).value, x, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 31), st.integers(0, 31), st.integers(0, 2 ** 31))
def test_fourier_unit_shift_equivariance(s1, s2, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((2, 32, 32))
    R = SpectralKernel.init(2, 2, 5, 6, r)
    y = fourier_unit(leaf(x), R).value
    ys = fourier_unit(leaf(np.roll(x, (s1, s2), axis=(-2, -1))), R).value
    assert np.max(np.abs(ys - np.roll(y, (s1, s2), axis=(-2, -1)))) < 1e-10


def test_fourier_unit_gradcheck_wrt_weights(rng):
    x = rng.standard_normal((2, 16, 16))
    R = SpectralKernel.init(2, 2, 4, 3, rng)
    w = rng.standard_normal((2, 16, 16))
    from hafno.core import weighted_sum

    err, _ = gradcheck(lambda n: weighted_sum(fourier_unit(n[0], SpectralKernel(n[1], n[2])), w),
                       [x, R.re.value, R.im.value], rng, h=1e-2)
    assert err < 1e-4


def test_kernel_init_bounds(rng):
    k = SpectralKernel.init(4, 8, 6, 5, rng)
    bound = 1 / 32 / np.sqrt(30)
    assert np.max(np.abs(k.re.value)) <= bound and np.max(np.abs(k.im.value)) <= bound
    assert k.mode_cut == (6, 5) and k.channels == (4, 8)
