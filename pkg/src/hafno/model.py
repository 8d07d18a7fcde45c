"""Hierarchical attentive Fourier neural operator.

lift -> per scale: attention, conv-residual Fourier layer(s); the lifted
features are max-pooled and convolved down to the next scale -> coarse-to-fine
upsample-and-fuse -> pointwise MLP head.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import core
from .core import DiffNode, ShapeError
from .formats import (FormatError, Reader, dataclass_from_dict, dataclass_to_dict, parse_sections,
                      read_file, read_header, sections_text, tensor_bytes, write_file, write_u16,
                      write_u32)
from .layers import AttentionParams, ConvResFourierParams, attention_block, conv_res_fourier, mlp_block
from .spectral import SpectralKernel, is_pow2

Params = dict[str, DiffNode]

ABLATION_ARMS = ("wo_attention", "wo_fno", "conv_to_res", "conv_to_fc", "att_to_mlp", "add_hier")


@dataclass(frozen=True)
class ScaleSpec:
    level: int
    channels: int
    modes: int
    layers_per_scale: int = 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 1
    out_channels: int = 1
    channels: tuple[int, ...] = (32, 64, 128, 128)
    modes: tuple[int, ...] = (24, 12, 6, 3)
    layers_per_scale: int = 1
    ratio: int = 2
    r_att: int = 4
    attention: str = "cbam"  # cbam | mlp | none
    fourier: bool = True
    residual: str = "conv"  # conv | fc | res
    conv_kernel: int = 3
    spatial_kernel: int = 7
    head_hidden: int = 128
    coords: bool = True
    arm: str = "full"

    def __post_init__(self):
        if len(self.channels) != len(self.modes) or not self.channels:
            raise ValueError("channels and modes need one entry per scale")
        if self.ratio != 2:
            raise ValueError("only a downsample ratio of 2 is supported")
        if self.attention not in ("cbam", "mlp", "none"):
            raise ValueError(f"unknown attention kind {self.attention!r}")
        if self.residual not in ("conv", "fc", "res"):
            raise ValueError(f"unknown residual kind {self.residual!r}")
        if self.attention != "none" and any(c % self.r_att for c in self.channels):
            raise ValueError(f"channels {self.channels} not divisible by r_att={self.r_att}")
        if min(self.modes) < 1 or self.layers_per_scale < 1:
            raise ValueError("modes and layers_per_scale must be positive")

    @property
    def K(self) -> int:
        return len(self.channels)

    @property
    def d_a(self) -> int:
        return self.in_channels + (2 if self.coords else 0)

    @property
    def scales(self) -> list[ScaleSpec]:
        return [ScaleSpec(k + 1, c, m, self.layers_per_scale)
                for k, (c, m) in enumerate(zip(self.channels, self.modes))]

    def min_grid(self) -> int:
        """Smallest padded side length: the coarsest scale must fit the attention kernel."""
        coarse = self.spatial_kernel if self.attention == "cbam" else self.conv_kernel
        need = 2 ** (self.K - 1) * max(coarse, 2)
        side = 1
        while side < need:
            side *= 2
        return side

    def padded_shape(self, H: int, W: int) -> tuple[int, int]:
        def up(n):
            side = self.min_grid()
            while side < n:
                side *= 2
            return side
        return up(H), up(W)

    def check_grid(self, H: int, W: int) -> None:
        if not (is_pow2(H) and is_pow2(W)):
            raise ShapeError(f"grid {(H, W)} is not a power of two")
        for s in self.scales:
            h, w = H >> (s.level - 1), W >> (s.level - 1)
            if self.fourier and (s.modes > h // 2 or s.modes > w // 2 + 1):
                raise ShapeError(f"scale {s.level}: {s.modes} modes exceed Nyquist of {h}x{w}")
            if self.attention == "cbam" and min(h, w) < self.spatial_kernel:
                raise ShapeError(f"scale {s.level}: grid {h}x{w} smaller than the attention kernel")

    def to_dict(self) -> dict[str, object]:
        return dataclass_to_dict(self)

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "ModelConfig":
        return dataclass_from_dict(cls, values)


def paper_config(in_channels: int = 1, out_channels: int = 1) -> ModelConfig:
    return ModelConfig(in_channels=in_channels, out_channels=out_channels)


def tiny_config(in_channels: int = 1, out_channels: int = 1) -> ModelConfig:
    """Desk-scale variant used by the ``tiny`` presets."""
    return ModelConfig(in_channels=in_channels, out_channels=out_channels, channels=(16, 16, 32, 32),
                       modes=(12, 6, 4, 2), head_hidden=32)


def fno_baseline(width: int, modes: int, layers: int = 4, in_channels: int = 1, out_channels: int = 1,
                 head_hidden: int = 128) -> ModelConfig:
    """Plain FNO within this code base: one scale, no attention, pointwise skip path."""
    return ModelConfig(in_channels=in_channels, out_channels=out_channels, channels=(width,),
                       modes=(modes,), layers_per_scale=layers, attention="none", residual="fc",
                       head_hidden=head_hidden, arm="fno")


def matched_fno_baseline(cfg: ModelConfig, modes: int | None = None, layers: int = 4) -> ModelConfig:
    """FNO baseline whose width brings its parameter count closest to ``cfg``'s."""
    target = param_count(cfg)
    modes = cfg.modes[0] if modes is None else modes
    best = None
    for width in range(1, 257):
        cand = fno_baseline(width, modes, layers, cfg.in_channels, cfg.out_channels, cfg.head_hidden)
        gap = abs(param_count(cand) - target)
        if best is None or gap < best[0]:
            best = (gap, cand)
    return best[1]


def build_ablation(cfg: ModelConfig, arm: str) -> ModelConfig:
    if arm == "wo_attention":
        return dataclasses.replace(cfg, attention="none", arm=arm)
    if arm == "wo_fno":
        return dataclasses.replace(cfg, fourier=False, arm=arm)
    if arm == "conv_to_res":
        return dataclasses.replace(cfg, residual="res", arm=arm)
    if arm == "conv_to_fc":
        return dataclasses.replace(cfg, residual="fc", arm=arm)
    if arm == "att_to_mlp":
        return dataclasses.replace(cfg, attention="mlp", arm=arm)
    if arm == "add_hier":
        return dataclasses.replace(cfg, channels=cfg.channels + (cfg.channels[-1],),
                                   modes=cfg.modes + (max(1, cfg.modes[-1] // 2),), arm=arm)
    raise ValueError(f"unknown ablation arm {arm!r}; expected one of {', '.join(ABLATION_ARMS)}")


# ----------------------------------------------------------------- params

def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every learnable tensor, in declaration order."""
    shapes: dict[str, tuple[int, ...]] = {}
    C = cfg.channels
    k = cfg.conv_kernel
    shapes["lift.w"] = (C[0], cfg.d_a)
    shapes["lift.b"] = (C[0],)
    for s in cfg.scales:
        c, p = s.channels, f"s{s.level}"
        if cfg.attention == "cbam":
            h = c // cfg.r_att
            shapes[f"{p}.att.mlp1.w"] = (h, c)
            shapes[f"{p}.att.mlp1.b"] = (h,)
            shapes[f"{p}.att.mlp2.w"] = (c, h)
            shapes[f"{p}.att.mlp2.b"] = (c,)
            shapes[f"{p}.att.spatial.w"] = (1, 2, cfg.spatial_kernel, cfg.spatial_kernel)
        elif cfg.attention == "mlp":
            h = c // cfg.r_att
            shapes[f"{p}.mlp.w1"] = (h, c)
            shapes[f"{p}.mlp.b1"] = (h,)
            shapes[f"{p}.mlp.w2"] = (c, h)
            shapes[f"{p}.mlp.b2"] = (c,)
        for layer in range(s.layers_per_scale):
            q = f"{p}.crf{layer}"
            if cfg.fourier:
                shapes[f"{q}.R.re"] = (2 * s.modes, s.modes, c, c)
                shapes[f"{q}.R.im"] = (2 * s.modes, s.modes, c, c)
            if cfg.residual == "conv":
                shapes[f"{q}.conv.w"] = (c, c, k, k)
                shapes[f"{q}.conv.b"] = (c,)
            elif cfg.residual == "fc":
                shapes[f"{q}.conv.w"] = (c, c)
                shapes[f"{q}.conv.b"] = (c,)
        if s.level < cfg.K:
            shapes[f"down{s.level}.w"] = (C[s.level], c, k, k)
            shapes[f"down{s.level}.b"] = (C[s.level],)
    for lvl in range(cfg.K - 1, 0, -1):
        shapes[f"up{lvl}.w"] = (C[lvl - 1], C[lvl] + C[lvl - 1])
        shapes[f"up{lvl}.b"] = (C[lvl - 1],)
    shapes["head.w1"] = (cfg.head_hidden, C[0])
    shapes["head.b1"] = (cfg.head_hidden,)
    shapes["head.w2"] = (cfg.out_channels, cfg.head_hidden)
    shapes["head.b2"] = (cfg.out_channels,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: ModelConfig, seed: int = 0) -> Params:
    """Uniform(+-1/sqrt(fan_in)) for dense/conv tensors; spectral kernels use the small-gain rule."""
    rng = np.random.default_rng(seed)
    params: Params = {}
    shapes = param_shapes(cfg)
    for name, shape in shapes.items():
        if name.endswith(".R.re"):
            two_m, m, ci, co = shape
            R = SpectralKernel.init(ci, co, two_m // 2, m, rng)
            params[name] = R.re
            params[name[:-3] + ".im"] = R.im
            continue
        if name.endswith(".R.im"):
            continue
        weight_name = name[:-1] + "w" if name.endswith(".b") else name
        if name.endswith((".b1", ".b2")):
            weight_name = name[:-2] + "w" + name[-1]
        wshape = shapes[weight_name]
        fan_in = int(np.prod(wshape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        params[name] = core.leaf(rng.uniform(-bound, bound, shape))
    return {name: params[name] for name in shapes}


def zeros_like_params(cfg: ModelConfig) -> Params:
    return {n: core.leaf(np.zeros(s)) for n, s in param_shapes(cfg).items()}


def detached(params: Params) -> Params:
    return {n: p.detach() for n, p in params.items()}


def _attention(params: Params, p: str) -> AttentionParams:
    return AttentionParams(params[f"{p}.att.mlp1.w"], params[f"{p}.att.mlp1.b"],
                           params[f"{p}.att.mlp2.w"], params[f"{p}.att.mlp2.b"],
                           params[f"{p}.att.spatial.w"])


def _crf(params: Params, q: str, cfg: ModelConfig) -> ConvResFourierParams:
    R = SpectralKernel(params[f"{q}.R.re"], params[f"{q}.R.im"]) if cfg.fourier else None
    w = params.get(f"{q}.conv.w")
    b = params.get(f"{q}.conv.b")
    return ConvResFourierParams(R, w, b, cfg.residual)


# ---------------------------------------------------------------- forward

def coordinate_channels(B: int | None, H: int, W: int) -> np.ndarray:
    """Cell-centre coordinates in [0, 1]: channel 0 is x (columns), channel 1 is y (rows)."""
    ys = (np.arange(H) + 0.5) / H
    xs = (np.arange(W) + 0.5) / W
    grid = np.stack([np.broadcast_to(xs[None, :], (H, W)), np.broadcast_to(ys[:, None], (H, W))])
    return grid if B is None else np.broadcast_to(grid, (B, 2, H, W)).copy()


def prepare_input(a: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Append coordinate channels and zero-pad right/bottom to the model grid."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    B, C, H, W = a.shape
    if C != cfg.in_channels:
        raise ShapeError(f"input has {C} channels, model expects {cfg.in_channels}")
    if cfg.coords:
        a = np.concatenate([a, coordinate_channels(B, H, W)], axis=1)
    Hp, Wp = cfg.padded_shape(H, W)
    if (Hp, Wp) != (H, W):
        a = np.pad(a, ((0, 0), (0, 0), (0, Hp - H), (0, Wp - W)))
    return a


def lift(x: DiffNode, params: Params) -> DiffNode:
    return core.pointwise_linear(x, params["lift.w"], params["lift.b"])


def downsample(x: DiffNode, params: Params, level: int) -> DiffNode:
    return core.conv2d_circular(core.maxpool2(x), params[f"down{level}.w"], params[f"down{level}.b"])


def upsample_fuse(coarse: DiffNode, fine: DiffNode, params: Params, level: int) -> DiffNode:
    if coarse.shape[-2] * 2 != fine.shape[-2] or coarse.shape[-1] * 2 != fine.shape[-1]:
        raise ShapeError(f"upsample_fuse: coarse {coarse.shape[-2:]} is not half of fine {fine.shape[-2:]}")
    merged = core.concat([core.bilinear_upsample2(coarse), fine], axis=-3)
    return core.pointwise_linear(merged, params[f"up{level}.w"], params[f"up{level}.b"])


def scale_block(x: DiffNode, params: Params, cfg: ModelConfig, level: int) -> DiffNode:
    p = f"s{level}"
    if cfg.attention == "cbam":
        v = attention_block(x, _attention(params, p))
    elif cfg.attention == "mlp":
        v = mlp_block(x, params[f"{p}.mlp.w1"], params[f"{p}.mlp.b1"], params[f"{p}.mlp.w2"], params[f"{p}.mlp.b2"])
    else:
        v = x
    for layer in range(cfg.layers_per_scale):
        v = conv_res_fourier(v, _crf(params, f"{p}.crf{layer}", cfg))
    return v


def network(x, cfg: ModelConfig, params: Params) -> DiffNode:
    """The translation-equivariant body: input already augmented and padded."""
    x = core.as_node(x)
    cfg.check_grid(*x.shape[-2:])
    feats = lift(x, params)
    outs = []
    for s in cfg.scales:
        outs.append(scale_block(feats, params, cfg, s.level))
        if s.level < cfg.K:
            feats = downsample(feats, params, s.level)
    u = outs[-1]
    for lvl in range(cfg.K - 1, 0, -1):
        u = upsample_fuse(u, outs[lvl - 1], params, lvl)
    h = core.gelu(core.pointwise_linear(u, params["head.w1"], params["head.b1"]))
    return core.pointwise_linear(h, params["head.w2"], params["head.b2"])


def forward(a, cfg: ModelConfig, params: Params) -> DiffNode:
    """Map coefficient fields ``[B, d_in, H, W]`` (or ``[d_in, H, W]``) to ``[B, d_u, H, W]``."""
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("model input contains non-finite values")
    H, W = a.shape[-2:]
    out = network(prepare_input(a, cfg), cfg, params)
    return core.crop(out, H, W)


def predictor(cfg: ModelConfig, params: Params) -> Callable[[np.ndarray], np.ndarray]:
    frozen = detached(params)
    return lambda a: forward(a, cfg, frozen).value


# ------------------------------------------------------------- checkpoint

CHECKPOINT_MAGIC = b"HAFN"
CHECKPOINT_VERSION = 1
OPT_MAGIC = b"OPTS"


def save_checkpoint(path, cfg: ModelConfig, params: Params, meta: dict[str, dict[str, object]] | None = None,
                    optimizer: tuple[dict[str, object], dict[str, np.ndarray]] | None = None) -> None:
    """Write config text, parameters and optionally an optimizer section.

    ``meta`` adds extra config sections (training settings, normalizer);
    ``optimizer`` is ``(scalar fields, named moment tensors)``.
    """
    sections = {"model": cfg.to_dict()}
    sections.update(meta or {})
    text = sections_text(sections).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, write_u16(CHECKPOINT_VERSION), write_u32(len(text)), text,
              write_u32(len(params))]
    chunks += [tensor_bytes(name, p.value) for name, p in params.items()]
    if optimizer is not None:
        fields, tensors = optimizer
        otext = sections_text({"optimizer": fields}).encode("utf-8")
        chunks += [OPT_MAGIC, write_u32(len(otext)), otext, write_u32(len(tensors))]
        chunks += [tensor_bytes(name, arr) for name, arr in tensors.items()]
    write_file(path, chunks)


@dataclass
class Checkpoint:
    cfg: ModelConfig
    params: Params
    meta: dict[str, dict[str, str]]
    optimizer: tuple[dict[str, str], dict[str, np.ndarray]] | None


def load_checkpoint(path, expect: ModelConfig | None = None) -> Checkpoint:
    r = Reader(read_file(path))
    read_header(r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
    (n,) = r.unpack("<I")
    sections = parse_sections(r.take(n).decode("utf-8"))
    cfg = ModelConfig.from_dict(sections.pop("model"))
    if expect is not None and expect != cfg:
        diff = [f.name for f in dataclasses.fields(cfg) if getattr(cfg, f.name) != getattr(expect, f.name)]
        raise FormatError("mismatch", f"checkpoint config differs in: {', '.join(diff)}")
    shapes = param_shapes(cfg)
    (count,) = r.unpack("<I")
    params: Params = {}
    for _ in range(count):
        name, arr = r.tensor(named=True)
        if shapes.get(name) != arr.shape:
            raise FormatError("mismatch", f"parameter {name} has shape {arr.shape}, config implies {shapes.get(name)}")
        params[name] = core.leaf(arr)
    if list(params) != list(shapes):
        raise FormatError("mismatch", "checkpoint parameters do not match the configuration")
    optimizer = None
    if not r.at_end():
        if r.take(4) != OPT_MAGIC:
            raise FormatError("bad_magic", "bad optimizer section marker")
        (n,) = r.unpack("<I")
        fields = parse_sections(r.take(n).decode("utf-8"))["optimizer"]
        (count,) = r.unpack("<I")
        tensors = dict(r.tensor(named=True) for _ in range(count))
        optimizer = (fields, tensors)
    return Checkpoint(cfg, params, sections, optimizer)
