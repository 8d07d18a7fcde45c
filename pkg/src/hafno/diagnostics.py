"""Numerical checks of the model's structural claims and frequency-domain error reports."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import core, layers, model, spectral
from .core import DiffNode, ShapeError
from .spectral import SpectralKernel, half_to_full, mode_weights, rfft2

# --------------------------------------------------------------- spectra


@dataclass
class SpectralErrorReport:
    """Frequency-resolved error of a prediction.

    ``band_error_energy`` partitions the error energy sum((pred - truth)^2)
    across radial bands; ``band_rel_error`` is sqrt(error / truth energy) per
    band. ``shifted_view`` is the full-spectrum error magnitude laid out with
    the zero frequency at the corners, which puts the highest frequencies in
    the middle of the image.
    """

    error_map: np.ndarray
    band_error_energy: np.ndarray
    band_truth_energy: np.ndarray
    band_rel_error: np.ndarray
    shifted_view: np.ndarray

    @property
    def n_bands(self) -> int:
        return len(self.band_error_energy)

    @property
    def total_error_energy(self) -> float:
        return float(self.band_error_energy.sum())

    def top_half_rel_error(self) -> float:
        """Relative error over the upper half of the bands combined."""
        lo = self.n_bands // 2
        return _ratio(self.band_error_energy[lo:].sum(), self.band_truth_energy[lo:].sum())


def _ratio(err: float, truth: float) -> float:
    if truth > 0:
        return float(np.sqrt(err / truth))
    return 0.0 if err == 0 else float("inf")


def radial_bands(H: int, W: int, n_bands: int = 8) -> np.ndarray:
    """Band index per rfft mode: floor(|k|) scaled so radius min(H, W)/2 reaches the top band.

    Radii at or beyond the Nyquist (including the Nyquist row) fall in the top band.
    """
    ky = np.fft.fftfreq(H, 1.0 / H)[:, None]
    kx = np.arange(W // 2 + 1)[None, :]
    r = np.floor(np.sqrt(kx ** 2 + ky ** 2)).astype(int)
    return np.minimum(n_bands - 1, r * n_bands // (min(H, W) // 2))


def spectral_error_map(pred, truth, n_bands: int = 8) -> SpectralErrorReport:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"spectral_error_map: {pred.shape} vs {truth.shape}")
    H, W = truth.shape[-2:]
    E = rfft2(pred - truth).coeffs.reshape(-1, H, W // 2 + 1)
    T = rfft2(truth).coeffs.reshape(-1, H, W // 2 + 1)
    weight = mode_weights(W)[None, :] / (H * W)
    err_energy = (np.abs(E) ** 2).sum(axis=0) * weight
    truth_energy = (np.abs(T) ** 2).sum(axis=0) * weight
    bands = radial_bands(H, W, n_bands)
    be = np.bincount(bands.ravel(), err_energy.ravel(), minlength=n_bands)
    bt = np.bincount(bands.ravel(), truth_energy.ravel(), minlength=n_bands)
    rel = np.array([_ratio(e, t) for e, t in zip(be, bt)])
    emap = np.sqrt((np.abs(E) ** 2).mean(axis=0))
    full = np.sqrt((np.abs(half_to_full(spectral.Spectrum(E, (H, W)))) ** 2).mean(axis=0))
    return SpectralErrorReport(emap, be, bt, rel, full)


def write_error_csv(report: SpectralErrorReport, directory, prefix: str = "spectral") -> dict[str, str]:
    os.makedirs(directory, exist_ok=True)
    paths = {"modes": os.path.join(directory, f"{prefix}_modes.csv"),
             "bands": os.path.join(directory, f"{prefix}_bands.csv")}
    with open(paths["modes"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("mode_row", "mode_col", "error_mag"))
        for (i, j), v in np.ndenumerate(report.error_map):
            w.writerow((i, j, repr(float(v))))
    with open(paths["bands"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("band", "rel_error"))
        for b, v in enumerate(report.band_rel_error):
            w.writerow((b, repr(float(v))))
    return paths


def write_pgm(path, image: np.ndarray) -> None:
    """16-bit binary PGM of log(1 + |image|), scaled to the full range."""
    v = np.log1p(np.abs(np.asarray(image, dtype=np.float64)))
    top = v.max()
    scaled = np.zeros(v.shape, dtype=">u2") if top == 0 else np.round(v / top * 65535).astype(">u2")
    H, W = scaled.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n65535\n".encode("ascii"))
        fh.write(scaled.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    W, H = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(H, W)


# ----------------------------------------------------------- equivariance

def cyclic_shift(x: np.ndarray, s: tuple[int, int]) -> np.ndarray:
    return np.roll(np.asarray(x), shift=tuple(s), axis=(-2, -1))


def check_shift_equivariance(operator: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                             s: tuple[int, int], relative: bool = False) -> float:
    """max |op(shift(x)) - shift(op(x))|, optionally divided by max |op(x)|."""
    y = np.asarray(operator(x))
    ys = np.asarray(operator(cyclic_shift(x, s)))
    dev = float(np.max(np.abs(ys - cyclic_shift(y, s))))
    if relative:
        scale = float(np.max(np.abs(y)))
        return dev / scale if scale > 0 else dev
    return dev


GROUP_ELEMENTS = ("rot90", "flip_x", "flip_y")


def group_action(x: np.ndarray, g: str) -> np.ndarray:
    """Exact torus actions fixing index 0: rot90 gives y[n1, n2] = x[-n2, n1]; flips negate one index."""
    x = np.asarray(x)
    H, W = x.shape[-2:]
    ri = (-np.arange(H)) % H
    ci = (-np.arange(W)) % W
    if g == "flip_x":
        return x[..., :, ci]
    if g == "flip_y":
        return x[..., ri, :]
    if g == "rot90":
        if H != W:
            raise ShapeError(f"rot90 needs a square grid, got {(H, W)}")
        return np.swapaxes(x, -1, -2)[..., :, ci]
    raise ValueError(f"unknown group element {g!r}")


def check_fourier_group_commutation(field: np.ndarray, g: str) -> float:
    """max |rfft2(g x) - P_g rfft2(x)| where P_g permutes (and conjugates) modes."""
    x = np.asarray(field, dtype=np.float64)
    H, W = x.shape[-2:]
    if g == "rot90" and H != W:
        raise ShapeError(f"rot90 needs a square grid, got {(H, W)}")
    lhs = rfft2(group_action(x, g)).coeffs
    S = rfft2(x)
    R = S.coeffs
    rows = (-np.arange(H)) % H
    if g == "flip_x":
        # F(x)[k1, -k2] = conj F(x)[-k1, k2] for real x
        rhs = np.conj(R[..., rows, :])
    elif g == "flip_y":
        rhs = R[..., rows, :]
    elif g == "rot90":
        full = half_to_full(S)
        k1 = np.arange(H)[:, None]
        k2 = np.arange(W // 2 + 1)[None, :]
        # y[n1, n2] = x[-n2, n1]  =>  Y[k1, k2] = X[-k2, k1]
        rhs = full[..., (-k2) % H, k1]
    else:
        raise ValueError(f"unknown group element {g!r}")
    return float(np.max(np.abs(lhs - rhs)))


def model_equivariance(cfg: model.ModelConfig, params: model.Params, a: np.ndarray,
                       s: tuple[int, int]) -> float:
    """Relative shift deviation of the network body on the augmented, padded input.

    Coordinate channels are part of that input and shift with it; shifts must
    be multiples of 2^(K-1).
    """
    frozen = model.detached(params)
    x = model.prepare_input(a, cfg)
    return check_shift_equivariance(lambda z: model.network(z, cfg, frozen).value, x, s, relative=True)


# -------------------------------------------------------------- gradcheck

@dataclass
class GradcheckEntry:
    name: str
    max_rel_error: float
    linear: bool
    worst: tuple[str, int, float, float] | None = None  # input, flat index, analytic, numeric


def gradcheck(fn: Callable[[list[DiffNode]], DiffNode], inputs: list[np.ndarray], rng: np.random.Generator,
              n_points: int = 10, h: float = 1e-5, labels: list[str] | None = None, order: int = 2,
              per: str = "coordinate"):
    """Central differences at ``n_points`` coordinates of each input.

    Half the coordinates (rounded up) are drawn from where the analytic
    gradient is nonzero, so sparse gradients such as max pooling are actually
    exercised. ``order`` 4 uses the five-point stencil, whose smaller
    truncation error allows a larger step and hence less round-off.
    The relative error of a coordinate is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8 * largest numeric entry seen for that input). Where the
    analytic gradient is exactly zero (a structurally dead weight) a ratio is
    meaningless; those coordinates count as exact when |numeric| stays within
    the stencil's round-off bound 4 * eps * |loss| * sum|c| / h, and as error 1
    otherwise. With ``per="vector"`` the sampled coordinates of all inputs
    are pooled into one gradient vector and the error is
    ||analytic - numeric|| / ||numeric||; this is the measure for composite
    losses whose gradient entries span many decades, some below what a
    difference quotient resolves.
    Returns (max relative error, worst (input, index, analytic, numeric)).
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    stencil = {2: ((1, 0.5), (-1, -0.5)), 4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}[order]
    labels = labels or [f"x{i}" for i in range(len(inputs))]
    nodes = [core.leaf(np.array(x, dtype=np.float64)) for x in inputs]
    loss = fn(nodes)
    core.backward(loss)
    roundoff = 4 * np.finfo(np.float64).eps * abs(float(loss.value)) * sum(abs(c) for _, c in stencil) / h
    worst_err, worst = 0.0, None
    pooled = []
    for node, label in zip(nodes, labels):
        analytic = node.grad if node.grad is not None else np.zeros_like(node.value)
        flat = node.value.reshape(-1)
        n = min(n_points, flat.size)
        support = np.flatnonzero(analytic.reshape(-1))
        first = rng.choice(support, size=min((n + 1) // 2, support.size), replace=False)
        rest = np.setdiff1d(np.arange(flat.size), first)
        picks = np.concatenate([first, rng.choice(rest, size=n - first.size, replace=False)]).astype(int)
        numeric = []
        for i in picks:
            keep = flat[i]
            d = 0.0
            for step, c in stencil:
                flat[i] = keep + step * h
                d += c * float(fn([core.constant(v.value) for v in nodes]).value)
            flat[i] = keep
            numeric.append(d / h)
        numeric = np.array(numeric)
        got = analytic.reshape(-1)[picks]
        floor = max(1e-8 * float(np.max(np.abs(numeric))), 1e-300)
        rel = np.abs(got - numeric) / np.maximum(np.maximum(np.abs(got), np.abs(numeric)), floor)
        dead = got == 0
        rel[dead] = np.where(np.abs(numeric[dead]) <= roundoff, 0.0, 1.0)
        pooled.append((got, numeric))
        j = int(np.argmax(rel))
        if rel[j] > worst_err or worst is None:
            worst_err = max(worst_err, float(rel[j]))
            worst = (label, int(picks[j]), float(got[j]), float(numeric[j]))
    if per == "vector":
        a = np.concatenate([g for g, _ in pooled])
        b = np.concatenate([n for _, n in pooled])
        return float(np.linalg.norm(a - b) / np.linalg.norm(b)), worst
    return worst_err, worst


def _functional(rng, op):
    """Wrap ``op`` into a scalar loss <w, op(...)> with a fixed random weight."""
    cache = {}

    def fn(nodes):
        out = op(nodes)
        if "w" not in cache:
            cache["w"] = rng.standard_normal(out.shape)
        return core.weighted_sum(out, cache["w"])

    return fn


def _attn_params(nodes, offset=0):
    return layers.AttentionParams(*nodes[offset:offset + 5])


def _suite_cases(rng: np.random.Generator):
    """(name, linear, op over nodes, inputs)."""
    r = rng.standard_normal
    C, H, W = 4, 16, 16
    x = r((2, C, H, W))
    m1, m2 = 4, 3
    k = SpectralKernel.init(C, 3, m1, m2, rng)
    att = [r((1, C)) * 0.5, r(1) * 0.1, r((C, 1)) * 0.5, r(C) * 0.1, r((1, 2, 7, 7)) * 0.2]
    crf_k = SpectralKernel.init(C, C, m1, m2, rng)
    cases = [
        ("add", True, lambda n: n[0] + n[1], [x, r(x.shape)]),
        ("sub", True, lambda n: n[0] - n[1], [x, r(x.shape)]),
        ("mul", False, lambda n: n[0] * n[1], [x, r(x.shape)]),
        ("scale", True, lambda n: core.scale(n[0], 1.7), [x]),
        ("gelu", False, lambda n: core.gelu(n[0]), [x]),
        ("sigmoid", False, lambda n: core.sigmoid(n[0]), [x]),
        ("gate", False, lambda n: core.gate(n[0], n[1]), [x, r((2, C, 1, 1))]),
        ("concat", True, lambda n: core.concat([n[0], n[1]]), [x, r((2, 2, H, W))]),
        ("crop", True, lambda n: core.crop(n[0], 11, 13), [x]),
        ("channel_mean", True, lambda n: core.channel_mean(n[0]), [x]),
        ("channel_max", False, lambda n: core.channel_max(n[0]), [x]),
        ("global_avg_pool", True, lambda n: core.global_avg_pool(n[0]), [x]),
        ("global_max_pool", False, lambda n: core.global_max_pool(n[0]), [x]),
        ("pointwise_linear", False, lambda n: core.pointwise_linear(n[0], n[1], n[2]),
         [x, r((3, C)), r(3)]),
        ("conv2d_circular", False, lambda n: core.conv2d_circular(n[0], n[1], n[2]),
         [x, r((3, C, 3, 3)), r(3)]),
        ("maxpool2", False, lambda n: core.maxpool2(n[0]), [x]),
        ("bilinear_upsample2", True, lambda n: core.bilinear_upsample2(n[0]), [x]),
        ("fourier_unit", False, lambda n: spectral.fourier_unit(n[0], SpectralKernel(n[1], n[2])),
         [x, k.re.value, k.im.value]),
        ("channel_attention", False, lambda n: core.gate(n[0], layers.channel_attention(n[0], _attn_params(n, 1))),
         [x] + att),
        ("spatial_attention", False, lambda n: layers.spatial_attention(n[0], _attn_params(n, 1)), [x] + att),
        ("attention_block", False, lambda n: layers.attention_block(n[0], _attn_params(n, 1)), [x] + att),
        ("conv_res_fourier", False,
         lambda n: layers.conv_res_fourier(n[0], layers.ConvResFourierParams(SpectralKernel(n[1], n[2]), n[3], n[4])),
         [x, crf_k.re.value, crf_k.im.value, r((C, C, 3, 3)) * 0.3, r(C) * 0.1]),
    ]
    # linear ops: the bilinear ones are linear in each argument separately but not jointly
    return cases


GRADCHECK_MODEL = model.ModelConfig(in_channels=1, out_channels=1, channels=(4, 4, 8, 8), modes=(4, 3, 2, 1),
                                    head_hidden=8)


def gradcheck_suite(seed: int = 0, n_points: int = 10, h: float = 1e-5, linear_h: float = 1.0,
                    include_model: bool = True) -> list[GradcheckEntry]:
    """Gradient checks for every differentiable op, the N-MSE loss and a full-model loss.

    Linear ops use ``linear_h``: central differences are exact for linear
    functionals, so a larger step only removes round-off. The full-model
    loss is scored as one pooled gradient vector (see ``gradcheck``); its
    per-coordinate worst case is still reported in the entry.
    """
    from .training import nmse

    rng = np.random.default_rng(seed)
    out = []
    for name, linear, op, inputs in _suite_cases(rng):
        fn = _functional(rng, op)
        err, worst = gradcheck(fn, inputs, rng, n_points, linear_h if linear else h)
        out.append(GradcheckEntry(name, err, linear, worst))
    truth = rng.standard_normal((3, 1, 8, 8))
    err, worst = gradcheck(lambda n: nmse(n[0], truth), [truth + 0.3 * rng.standard_normal(truth.shape)],
                           rng, n_points, h)
    out.append(GradcheckEntry("nmse", err, False, worst))
    if include_model:
        cfg = GRADCHECK_MODEL
        params = model.init_params(cfg, seed)
        names = list(params)
        a = rng.standard_normal((2, 1, 64, 64))
        u = rng.standard_normal((2, 1, 64, 64))

        def loss(nodes):
            p = dict(zip(names, nodes[1:]))
            pred = model.network(core.concat([nodes[0], core.constant(model.prepare_input(a, cfg)[:, 1:])]),
                                 cfg, p)
            return nmse(pred, u)

        x0 = model.prepare_input(a, cfg)[:, :1]
        err, worst = gradcheck(loss, [x0] + [params[n].value for n in names], rng, max(2, n_points // 2),
                               h, labels=["input"] + names, per="vector")
        out.append(GradcheckEntry("model_loss", err, False, worst))
    return out
