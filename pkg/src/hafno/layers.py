"""Convolutional-residual Fourier layer and serial channel/spatial attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .core import DiffNode, ShapeError
from .spectral import SpectralKernel, fourier_unit


@dataclass
class ConvResFourierParams:
    """Spectral kernel plus the local residual branch.

    ``residual`` is ``"conv"`` (k x k circular conv), ``"fc"`` (pointwise
    linear) or ``"res"`` (identity skip, no weights). ``R=None`` drops the
    spectral branch.
    """

    R: SpectralKernel | None
    conv_w: DiffNode | None
    conv_b: DiffNode | None
    residual: str = "conv"


@dataclass
class AttentionParams:
    mlp1_w: DiffNode  # [C/r, C]
    mlp1_b: DiffNode
    mlp2_w: DiffNode  # [C, C/r]
    mlp2_b: DiffNode
    spatial_w: DiffNode  # [1, 2, k, k]

    @property
    def channels(self) -> int:
        return self.mlp2_w.shape[0]

    @property
    def r_att(self) -> int:
        return self.mlp2_w.shape[0] // self.mlp2_w.shape[1]


def conv_res_fourier(v: DiffNode, p: ConvResFourierParams) -> DiffNode:
    if p.residual == "conv":
        local = core.conv2d_circular(v, p.conv_w, p.conv_b)
    elif p.residual == "fc":
        local = core.pointwise_linear(v, p.conv_w, p.conv_b)
    elif p.residual == "res":
        local = v
    else:
        raise ValueError(f"unknown residual kind {p.residual!r}")
    if p.R is not None:
        local = local + fourier_unit(v, p.R)
    return core.gelu(local)


def _channel_mlp(d: DiffNode, p: AttentionParams) -> DiffNode:
    h = core.gelu(core.pointwise_linear(d, p.mlp1_w, p.mlp1_b))
    return core.pointwise_linear(h, p.mlp2_w, p.mlp2_b)


def channel_attention(a: DiffNode, p: AttentionParams) -> DiffNode:
    """Per-channel gate [..., C, 1, 1] from average- and max-pooled descriptors."""
    if a.shape[-3] != p.channels:
        raise ShapeError(f"channel_attention: input has {a.shape[-3]} channels, params expect {p.channels}")
    avg = _channel_mlp(core.global_avg_pool(a), p)
    mx = _channel_mlp(core.global_max_pool(a), p)
    return core.sigmoid(avg + mx)


def spatial_attention(a: DiffNode, p: AttentionParams) -> DiffNode:
    """Per-position gate [..., 1, H, W] from channel mean and max maps."""
    k = p.spatial_w.shape[-1]
    if min(a.shape[-2:]) < k:
        raise ShapeError(f"spatial_attention: grid {a.shape[-2:]} smaller than {k}x{k} kernel")
    desc = core.concat([core.channel_mean(a), core.channel_max(a)], axis=-3)
    return core.sigmoid(core.conv2d_circular(desc, p.spatial_w))


def attention_block(a: DiffNode, p: AttentionParams, alpha_c: DiffNode | None = None,
                    alpha_x: DiffNode | None = None) -> DiffNode:
    """v = alpha_X * (alpha_C * a) + a, channel gate first.

    ``alpha_c`` / ``alpha_x`` override the computed maps (used by tests).
    """
    ac = channel_attention(a, p) if alpha_c is None else alpha_c
    a_c = core.gate(a, ac)
    ax = spatial_attention(a_c, p) if alpha_x is None else alpha_x
    return core.gate(a_c, ax) + a


def mlp_block(a: DiffNode, w1: DiffNode, b1: DiffNode, w2: DiffNode, b2: DiffNode) -> DiffNode:
    """Pointwise two-layer MLP with residual; stands in for attention in ablations."""
    h = core.gelu(core.pointwise_linear(a, w1, b1))
    return core.pointwise_linear(h, w2, b2) + a


def attentive_conv_factorization_check(f: np.ndarray, psi: np.ndarray, p: AttentionParams,
                                       alpha_c: np.ndarray | None = None,
                                       alpha_x: np.ndarray | None = None) -> float:
    """Max deviation between attention-weighted correlation and weight-then-convolve.

    The left side evaluates sum_{x~} alpha(x~) f(x~) psi(x~ - x) position by
    position; the right side gates ``f`` by alpha_X * alpha_C and runs the
    circular convolution.
    """
    f = np.asarray(f, dtype=np.float64)
    node = core.constant(f)
    if alpha_c is None:
        alpha_c = channel_attention(node, p).value
    if alpha_x is None:
        alpha_x = spatial_attention(core.gate(node, core.constant(alpha_c)), p).value
    alpha = np.broadcast_to(alpha_x * alpha_c, f.shape)
    ci, H, W = f.shape
    co, _, k, _ = psi.shape
    r = k // 2
    left = np.zeros((co, H, W))
    for h in range(H):
        for w in range(W):
            acc = np.zeros(co)
            for dp in range(k):
                for dq in range(k):
                    xr, xc = (h + dp - r) % H, (w + dq - r) % W
                    acc += psi[:, :, dp, dq] @ (alpha[:, xr, xc] * f[:, xr, xc])
            left[:, h, w] = acc
    right = core.conv2d_circular(core.constant(alpha * f), core.constant(psi)).value
    return float(np.max(np.abs(left - right)))
