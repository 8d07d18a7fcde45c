"""Reverse-mode automatic differentiation over float64 numpy arrays.

Only the operations the network needs are provided. Field-valued ops act on
the trailing ``[C, H, W]`` axes and broadcast over any leading batch axes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

GELU_C = float(np.sqrt(2.0 / np.pi))
GELU_A = 0.044715


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DiffNode:
    """A value in the computation graph plus its (lazily created) gradient."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, parents: Sequence["DiffNode"] = (), backward_fn=None,
                 requires_grad: bool = False, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffNode":
        return DiffNode(self.value)

    def __repr__(self) -> str:
        return f"DiffNode(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def leaf(value, requires_grad: bool = True) -> DiffNode:
    """A graph input; parameters use ``requires_grad=True``."""
    return DiffNode(np.array(value, dtype=np.float64), requires_grad=requires_grad)


def constant(value) -> DiffNode:
    return DiffNode(value, requires_grad=False)


def as_node(x) -> DiffNode:
    return x if isinstance(x, DiffNode) else constant(x)


def _make(value: np.ndarray, parents: Sequence[DiffNode], backward_fn: Callable, op: str) -> DiffNode:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return DiffNode(value, op=op)
    return DiffNode(value, parents, backward_fn, requires_grad=True, op=op)


def zero_grad(nodes: Iterable[DiffNode]) -> None:
    for n in nodes:
        n.grad = None


def backward(loss: DiffNode) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------- elementwise

def _check_same(a: DiffNode, b: DiffNode, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: DiffNode, b) -> DiffNode:
    if not isinstance(b, DiffNode):
        c = float(b)
        return _make(a.value + c, (a,), lambda g: (g,), "add")
    _check_same(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: DiffNode, b) -> DiffNode:
    if not isinstance(b, DiffNode):
        c = float(b)
        return _make(a.value - c, (a,), lambda g: (g,), "sub")
    _check_same(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: DiffNode, b) -> DiffNode:
    if not isinstance(b, DiffNode):
        return scale(a, b)
    _check_same(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: DiffNode, c: float) -> DiffNode:
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def gelu(a: DiffNode) -> DiffNode:
    """GELU, tanh approximation."""
    x = a.value
    x2 = x * x
    t = np.tanh(GELU_C * x * (1.0 + GELU_A * x2))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x2)
        return (g * d,)

    return _make(out, (a,), bw, "gelu")


def sigmoid(a: DiffNode) -> DiffNode:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale}


def elementwise(kind: str, a: DiffNode, b=None) -> DiffNode:
    if kind == "gelu":
        return gelu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {kind!r}")
    return _ELEMENTWISE[kind](a, b)


def gate(x: DiffNode, alpha: DiffNode) -> DiffNode:
    """Broadcast product ``alpha * x`` where alpha has singleton axes (attention maps)."""
    try:
        shape = np.broadcast_shapes(x.shape, alpha.shape)
    except ValueError:
        raise ShapeError(f"gate: cannot broadcast {alpha.shape} onto {x.shape}") from None
    if shape != x.shape:
        raise ShapeError(f"gate: map {alpha.shape} would enlarge {x.shape}")
    xv, av = x.value, alpha.value

    def bw(g):
        return g * av, _unbroadcast(g * xv, av.shape)

    return _make(xv * av, (x, alpha), bw, "gate")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def sum_all(a: DiffNode) -> DiffNode:
    shape = a.shape
    return _make(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def weighted_sum(a: DiffNode, w: np.ndarray) -> DiffNode:
    """Linear functional <w, a>; handy for gradient checks."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != a.shape:
        raise ShapeError(f"weighted_sum: {w.shape} vs {a.shape}")
    return _make(np.asarray(np.sum(w * a.value)), (a,), lambda g: (g * w,), "wsum")


# ---------------------------------------------------------- structural ops

def concat(nodes: Sequence[DiffNode], axis: int = -3) -> DiffNode:
    vals = [n.value for n in nodes]
    out = np.concatenate(vals, axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(out, tuple(nodes), bw, "concat")


def crop(x: DiffNode, h: int, w: int) -> DiffNode:
    """Keep the top-left ``h x w`` window of the spatial axes."""
    H, W = x.shape[-2:]
    if h > H or w > W:
        raise ShapeError(f"crop to {(h, w)} larger than {(H, W)}")
    if (h, w) == (H, W):
        return x
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[..., :h, :w] = g
        return (full,)

    return _make(x.value[..., :h, :w].copy(), (x,), bw, "crop")


def _first_argmax_reduce(v: np.ndarray, axis: int):
    idx = np.expand_dims(np.argmax(v, axis=axis), axis)
    return np.take_along_axis(v, idx, axis=axis), idx


def channel_mean(x: DiffNode) -> DiffNode:
    C = x.shape[-3]
    shape = x.shape
    return _make(x.value.mean(axis=-3, keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g / C, shape).copy(),), "channel_mean")


def channel_max(x: DiffNode) -> DiffNode:
    """Max over channels; gradient goes to the first maximal channel."""
    out, idx = _first_argmax_reduce(x.value, -3)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        np.put_along_axis(full, idx, g, axis=-3)
        return (full,)

    return _make(out, (x,), bw, "channel_max")


def global_avg_pool(x: DiffNode) -> DiffNode:
    H, W = x.shape[-2:]
    shape = x.shape
    return _make(x.value.mean(axis=(-2, -1), keepdims=True), (x,),
                 lambda g: (np.broadcast_to(g / (H * W), shape).copy(),), "avg_pool")


def global_max_pool(x: DiffNode) -> DiffNode:
    """Spatial max per channel; gradient goes to the first (row-major) maximum."""
    shape = x.shape
    flat = x.value.reshape(*shape[:-2], -1)
    out, idx = _first_argmax_reduce(flat, -1)

    def bw(g):
        full = np.zeros(flat.shape)
        np.put_along_axis(full, idx, g.reshape(idx.shape), axis=-1)
        return (full.reshape(shape),)

    return _make(out.reshape(*shape[:-2], 1, 1), (x,), bw, "max_pool")


# ------------------------------------------------------------- linear maps

def pointwise_linear(x: DiffNode, weight: DiffNode, bias: DiffNode | None = None) -> DiffNode:
    """Per-grid-point channel map: out[c] = sum_k weight[c, k] x[k] + bias[c]."""
    xv, wv = x.value, weight.value
    if xv.ndim < 3:
        raise ShapeError(f"pointwise_linear expects [..., C, H, W], got {x.shape}")
    co, ci = wv.shape
    if xv.shape[-3] != ci:
        raise ShapeError(f"pointwise_linear: input has {xv.shape[-3]} channels, weight expects {ci}")
    lead, (H, W) = xv.shape[:-3], xv.shape[-2:]
    xf = xv.reshape(*lead, ci, H * W)
    out = np.matmul(wv, xf)
    if bias is not None:
        if bias.shape != (co,):
            raise ShapeError(f"pointwise_linear: bias shape {bias.shape}, expected {(co,)}")
        out = out + bias.value[:, None]
    out = out.reshape(*lead, co, H, W)

    def bw(g):
        gf = g.reshape(*lead, co, H * W)
        gx = np.matmul(wv.T, gf).reshape(xv.shape)
        gw = np.moveaxis(gf, -2, 0).reshape(co, -1) @ np.moveaxis(xf, -2, 0).reshape(ci, -1).T
        if bias is None:
            return gx, gw
        gb = gf.sum(axis=tuple(range(gf.ndim - 2)) + (gf.ndim - 1,))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "pointwise_linear")


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Periodic patches ``[..., C*k*k, H*W]`` ordered (channel, p, q)."""
    H, W = x.shape[-2:]
    r = k // 2
    rows = np.arange(-r, H + r) % H
    cols = np.arange(-r, W + r) % W
    xp = x[..., rows, :][..., cols]
    win = sliding_window_view(xp, (k, k), axis=(-2, -1))  # [..., C, H, W, k, k]
    nd = win.ndim
    order = tuple(range(nd - 5)) + (nd - 5, nd - 2, nd - 1, nd - 4, nd - 3)
    return np.ascontiguousarray(win.transpose(order)).reshape(*x.shape[:-3], -1, H * W)


def _conv_raw(x: np.ndarray, kv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    co, _, k, _ = kv.shape
    H, W = x.shape[-2:]
    colmat = _im2col(x, k)
    out = np.matmul(kv.reshape(co, -1), colmat)
    return out.reshape(*x.shape[:-3], co, H, W), colmat


def conv2d_circular(x: DiffNode, kernel: DiffNode, bias: DiffNode | None = None) -> DiffNode:
    """Cross-correlation with periodic wraparound; output keeps the spatial shape.

    out[o, h, w] = sum_{i,p,q} kernel[o, i, p, q] * x[i, h+p-r, w+q-r]  (indices mod H, W)
    """
    kv = kernel.value
    if kv.ndim != 4:
        raise ShapeError(f"conv kernel must be [C_out, C_in, k, k], got {kernel.shape}")
    co, ci, k, k2 = kv.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv kernel must be square with odd size, got {k}x{k2}")
    xv = x.value
    if xv.ndim < 3 or xv.shape[-3] != ci:
        raise ShapeError(f"conv2d: input {x.shape} does not match kernel C_in={ci}")
    H, W = xv.shape[-2:]
    if k > min(H, W):
        raise ShapeError(f"conv2d: kernel {k} larger than grid {(H, W)}")
    if k == 1:
        w1 = _make(kv[:, :, 0, 0].copy(), (kernel,), lambda g: (g[:, :, None, None],), "squeeze")
        return pointwise_linear(x, w1, bias)
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected {(co,)}")
    out, colmat = _conv_raw(xv, kv)
    if bias is not None:
        out += bias.value[:, None, None]
    lead = xv.shape[:-3]

    def bw(g):
        gf = g.reshape(*lead, co, H * W)
        gk = np.matmul(gf, np.swapaxes(colmat, -1, -2))
        gk = gk.reshape(-1, co, ci * k * k).sum(axis=0).reshape(kv.shape)
        flipped = np.ascontiguousarray(kv[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx, _ = _conv_raw(g, flipped) if x.requires_grad else (None, None)
        if bias is None:
            return gx, gk
        return gx, gk, gf.sum(axis=tuple(range(gf.ndim - 2)) + (gf.ndim - 1,))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _make(out, parents, bw, "conv2d")


def maxpool2(x: DiffNode) -> DiffNode:
    """2x2 max pooling, stride 2; ties resolve to the first element in row-major order."""
    xv = x.value
    H, W = xv.shape[-2:]
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {(H, W)}")
    lead = xv.shape[:-2]
    blocks = xv.reshape(*lead, H // 2, 2, W // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, H // 2, W // 2, 4)
    out, idx = _first_argmax_reduce(blocks, -1)

    def bw(g):
        full = np.zeros(blocks.shape)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        full = np.moveaxis(full.reshape(*lead, H // 2, W // 2, 2, 2), -2, -3)
        return (full.reshape(xv.shape),)

    return _make(out[..., 0], (x,), bw, "maxpool2")


def _up1d(v: np.ndarray, axis: int) -> np.ndarray:
    even = 0.75 * v + 0.25 * np.roll(v, 1, axis=axis)
    odd = 0.75 * v + 0.25 * np.roll(v, -1, axis=axis)
    axis = axis % v.ndim
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(v.shape)
    shape[axis] *= 2
    return out.reshape(shape)


def _up1d_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    sl_e = [slice(None)] * g.ndim
    sl_o = [slice(None)] * g.ndim
    sl_e[axis] = slice(0, None, 2)
    sl_o[axis] = slice(1, None, 2)
    ge, go = g[tuple(sl_e)], g[tuple(sl_o)]
    return 0.75 * (ge + go) + 0.25 * np.roll(ge, -1, axis=axis) + 0.25 * np.roll(go, 1, axis=axis)


def bilinear_upsample2(x: DiffNode) -> DiffNode:
    """Factor-2 bilinear interpolation, cell-centred samples, periodic neighbours.

    Output pixel centres sit at (j + 0.5) / 2n, so each output is 3/4 of the
    nearest input plus 1/4 of the next nearest one.
    """
    h, w = x.shape[-2:]
    if h < 2 or w < 2:
        raise ShapeError(f"bilinear_upsample2 needs h, w >= 2, got {(h, w)}")
    out = _up1d(_up1d(x.value, -2), -1)
    return _make(out, (x,), lambda g: (_up1d_adjoint(_up1d_adjoint(g, -1), -2),), "upsample2")
