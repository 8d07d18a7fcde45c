"""N-MSE objective, Adam, the epoch loop, evaluation, rollout and training checkpoints."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import core
from .core import DiffNode, ShapeError, _make
from .data.dataset import Dataset
from .formats import dataclass_from_dict, dataclass_to_dict
from .model import ModelConfig, Params, detached, forward, load_checkpoint, param_shapes, save_checkpoint

SHUFFLE_TAG = 1
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_size: int = 10
    epochs: int = 100
    seed: int = 0
    schedule: str = "cosine"  # cosine | constant
    lr_min: float = 1e-5
    grad_clip: float | None = None
    divergence_factor: float = 1e3
    normalize: bool = True
    wall_time: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive when set")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    initial_loss: float | None = None

    @classmethod
    def zeros(cls, params: Params) -> "OptimizerState":
        return cls({n: np.zeros_like(p.value) for n, p in params.items()},
                   {n: np.zeros_like(p.value) for n, p in params.items()})


# ------------------------------------------------------------------ metric

def nmse_values(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-sample ||pred - truth|| / ||truth|| over all non-batch axes."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"nmse: prediction {pred.shape} vs truth {truth.shape}")
    axes = tuple(range(1, truth.ndim))
    tn = np.sqrt(np.sum(truth * truth, axis=axes))
    zero = np.flatnonzero(tn == 0)
    if zero.size:
        raise ValueError(f"nmse: ground truth of sample {int(zero[0])} has zero norm")
    d = pred - truth
    return np.sqrt(np.sum(d * d, axis=axes)) / tn


def nmse(pred, truth) -> DiffNode:
    """Batch mean of relative L2 errors, differentiable in ``pred``."""
    pred = core.as_node(pred)
    truth = np.asarray(truth, dtype=np.float64)
    per = nmse_values(pred.value, truth)
    B = per.shape[0]
    axes = tuple(range(1, truth.ndim))
    tn = np.sqrt(np.sum(truth * truth, axis=axes))
    diff = pred.value - truth
    dn = per * tn
    shape = (B,) + (1,) * (truth.ndim - 1)

    def bw(g):
        # the relative error is not differentiable where pred == truth; take 0 there
        safe = np.where(dn > 0, dn, 1.0)
        coef = np.where(dn > 0, 1.0 / (safe * tn * B), 0.0)
        return (g * diff * coef.reshape(shape),)

    return _make(np.asarray(per.mean()), (pred,), bw, "nmse")


# -------------------------------------------------------------- normalizer

@dataclass
class Normalizer:
    """Per-channel affine maps; the network sees standardized inputs and predicts standardized targets."""

    in_mean: np.ndarray
    in_std: np.ndarray
    out_mean: np.ndarray
    out_std: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "Normalizer":
        def stats(x):
            mean = x.mean(axis=(0, 2, 3))
            std = x.std(axis=(0, 2, 3))
            return mean, np.where(std > 0, std, 1.0)
        return cls(*stats(ds.inputs), *stats(ds.targets))

    @classmethod
    def identity(cls, c_in: int, c_out: int) -> "Normalizer":
        return cls(np.zeros(c_in), np.ones(c_in), np.zeros(c_out), np.ones(c_out))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean[:, None, None]) / self.in_std[:, None, None]

    def decode(self, y: DiffNode) -> DiffNode:
        s = self.out_std[:, None, None]
        b = self.out_mean[:, None, None]
        out = y.value * s + b
        return _make(out, (y,), lambda g: (g * s,), "decode")

    def to_dict(self) -> dict[str, object]:
        return {k: tuple(float(v) for v in getattr(self, k)) for k in ("in_mean", "in_std", "out_mean", "out_std")}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "Normalizer":
        return cls(*(np.array([float(t) for t in d[k].split(",")]) for k in ("in_mean", "in_std", "out_mean", "out_std")))


def predict(cfg: ModelConfig, params: Params, norm: Normalizer, a: np.ndarray) -> DiffNode:
    return norm.decode(forward(norm.encode(np.asarray(a, dtype=np.float64)), cfg, params))


# ------------------------------------------------------------------- adam

def learning_rate(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.schedule == "constant" or total_steps <= 1:
        return cfg.lr
    t = min(step, total_steps) / total_steps
    return cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + math.cos(math.pi * t))


def adam_step(params: Params, state: OptimizerState, lr: float, grad_clip: float | None = None) -> None:
    """Bias-corrected Adam update in place; missing gradients count as zero."""
    grads = {}
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name}")
        grads[name] = g
    if grad_clip is not None:
        total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > grad_clip:
            grads = {n: g * (grad_clip / total) for n, g in grads.items()}
    b1, b2 = ADAM_BETAS
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


# ------------------------------------------------------------------- loop

@dataclass
class MetricRow:
    epoch: int
    split: str
    nmse: float
    wall_seconds: float = 0.0


@dataclass
class TrainResult:
    params: Params
    state: OptimizerState
    normalizer: Normalizer
    history: list[MetricRow] = field(default_factory=list)
    epochs_done: int = 0


def _batches(n: int, cfg: TrainConfig, epoch: int) -> list[np.ndarray]:
    perm = np.random.default_rng([cfg.seed, SHUFFLE_TAG, epoch]).permutation(n)
    return [perm[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def train(cfg_model: ModelConfig, params: Params, train_ds: Dataset, cfg: TrainConfig,
          val_ds: Dataset | None = None, state: OptimizerState | None = None,
          normalizer: Normalizer | None = None, start_epoch: int = 0,
          on_epoch: Callable[[TrainResult], None] | None = None) -> TrainResult:
    """Run epochs ``start_epoch+1 .. cfg.epochs``; metrics rows use 1-based epochs.

    Shuffling depends only on (seed, epoch), so a resumed run replays the
    uninterrupted one exactly.
    """
    if len(train_ds) == 0:
        raise ValueError("training set is empty")
    if train_ds.inputs.shape[1] != cfg_model.in_channels or train_ds.targets.shape[1] != cfg_model.out_channels:
        raise ShapeError(f"dataset channels {train_ds.inputs.shape[1]}->{train_ds.targets.shape[1]} do not match "
                         f"model {cfg_model.in_channels}->{cfg_model.out_channels}")
    if normalizer is None:
        normalizer = Normalizer.fit(train_ds) if cfg.normalize else Normalizer.identity(
            cfg_model.in_channels, cfg_model.out_channels)
    state = OptimizerState.zeros(params) if state is None else state
    result = TrainResult(params, state, normalizer, epochs_done=start_epoch)
    n = len(train_ds)
    total_steps = cfg.epochs * math.ceil(n / cfg.batch_size)
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        weighted = 0.0
        for idx in _batches(n, cfg, epoch):
            core.zero_grad(params.values())
            loss = nmse(predict(cfg_model, params, normalizer, train_ds.inputs[idx]), train_ds.targets[idx])
            value = float(loss.value)
            if state.initial_loss is None:
                state.initial_loss = value
            if not math.isfinite(value) or value > cfg.divergence_factor * state.initial_loss:
                raise DivergenceError(f"loss {value:.4e} at epoch {epoch}, step {state.step + 1} exceeds "
                                      f"{cfg.divergence_factor:g} x initial loss {state.initial_loss:.4e}")
            core.backward(loss)
            adam_step(params, state, learning_rate(cfg, state.step, total_steps), cfg.grad_clip)
            weighted += value * len(idx)
        wall = time.perf_counter() - t0 if cfg.wall_time else 0.0
        result.history.append(MetricRow(epoch, "train", weighted / n, wall))
        if val_ds is not None and len(val_ds):
            t1 = time.perf_counter()
            val = evaluate(cfg_model, params, val_ds, normalizer).nmse
            wall = time.perf_counter() - t1 if cfg.wall_time else 0.0
            result.history.append(MetricRow(epoch, "val", val, wall))
        result.epochs_done = epoch
        if on_epoch is not None:
            on_epoch(result)
    return result


@dataclass
class EvalResult:
    nmse: float
    per_sample: np.ndarray
    predictions: np.ndarray


def evaluate(cfg_model: ModelConfig, params: Params, ds: Dataset, normalizer: Normalizer,
             batch_size: int = 10) -> EvalResult:
    """Mean N-MSE over ``ds`` with parameters detached (no graph, no mutation)."""
    if len(ds) == 0:
        raise ValueError("evaluation set is empty")
    if ds.inputs.shape[1] != cfg_model.in_channels or ds.targets.shape[1] != cfg_model.out_channels:
        raise ShapeError(f"dataset channels {ds.inputs.shape[1]}->{ds.targets.shape[1]} do not match model "
                         f"{cfg_model.in_channels}->{cfg_model.out_channels}")
    frozen = detached(params)
    preds = []
    for i in range(0, len(ds), batch_size):
        preds.append(predict(cfg_model, frozen, normalizer, ds.inputs[i:i + batch_size]).value)
    pred = np.concatenate(preds)
    per = nmse_values(pred, ds.targets)
    return EvalResult(float(per.mean()), per, pred)


# ---------------------------------------------------------------- rollout

def rollout(step: Callable[[np.ndarray], np.ndarray], initial_frames: np.ndarray, n_steps: int,
            window: int = 10, renormalize: bool = False) -> np.ndarray:
    """Autoregressive prediction with a sliding window of ``window`` frames.

    ``step`` maps ``[window, H, W]`` to the next frame ``[H, W]`` (or ``[1, H, W]``).
    With ``renormalize`` each predicted frame is shifted to zero spatial mean
    before being fed back.
    """
    frames = np.asarray(initial_frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] != window:
        raise ShapeError(f"rollout needs exactly {window} conditioning frames, got shape {frames.shape}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    buf = frames.copy()
    out = np.empty((n_steps,) + frames.shape[1:])
    for t in range(n_steps):
        nxt = np.asarray(step(buf)).reshape(frames.shape[1:])
        if renormalize:
            nxt = nxt - nxt.mean()
        out[t] = nxt
        buf = np.concatenate([buf[1:], nxt[None]])
    return out


def model_step(cfg_model: ModelConfig, params: Params, normalizer: Normalizer) -> Callable[[np.ndarray], np.ndarray]:
    frozen = detached(params)
    return lambda frames: predict(cfg_model, frozen, normalizer, frames[None]).value[0, 0]


# ------------------------------------------------------------- persistence

METRICS_HEADER = ("epoch", "split", "nmse", "wall_seconds")


def write_metrics_csv(rows: list[MetricRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r.epoch, r.split, repr(float(r.nmse)), repr(float(r.wall_seconds))])


def read_metrics_csv(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricRow(int(r["epoch"]), r["split"], float(r["nmse"]), float(r["wall_seconds"])) for r in rows]


def save_training_checkpoint(path, cfg_model: ModelConfig, result: TrainResult, cfg: TrainConfig,
                             extra: dict[str, object] | None = None) -> None:
    fields: dict[str, object] = {"step": result.state.step, "epochs_done": result.epochs_done}
    if result.state.initial_loss is not None:
        fields["initial_loss"] = float(result.state.initial_loss)
    moments = {f"m.{n}": a for n, a in result.state.m.items()}
    moments.update({f"v.{n}": a for n, a in result.state.v.items()})
    meta = {"train": dataclass_to_dict(cfg), "normalizer": result.normalizer.to_dict()}
    if result.history:
        meta["history"] = {f"{r.epoch}.{r.split}": f"{float(r.nmse)!r} {float(r.wall_seconds)!r}"
                           for r in result.history}
    if extra:
        meta["run"] = extra
    save_checkpoint(path, cfg_model, result.params, meta, (fields, moments))


@dataclass
class LoadedRun:
    cfg_model: ModelConfig
    params: Params
    train_cfg: TrainConfig | None
    normalizer: Normalizer
    state: OptimizerState | None
    epochs_done: int
    meta: dict[str, dict[str, str]]
    history: list[MetricRow] = field(default_factory=list)


def load_training_checkpoint(path, expect: ModelConfig | None = None) -> LoadedRun:
    ck = load_checkpoint(path, expect)
    tcfg = dataclass_from_dict(TrainConfig, ck.meta["train"]) if "train" in ck.meta else None
    norm = (Normalizer.from_dict(ck.meta["normalizer"]) if "normalizer" in ck.meta
            else Normalizer.identity(ck.cfg.in_channels, ck.cfg.out_channels))
    state = None
    done = 0
    if ck.optimizer is not None:
        fields, tensors = ck.optimizer
        names = list(param_shapes(ck.cfg))
        state = OptimizerState({n: tensors[f"m.{n}"] for n in names}, {n: tensors[f"v.{n}"] for n in names},
                               int(fields["step"]),
                               float(fields["initial_loss"]) if "initial_loss" in fields else None)
        done = int(fields.get("epochs_done", 0))
    history = []
    for key, text in ck.meta.get("history", {}).items():
        epoch, split = key.split(".", 1)
        value, wall = text.split()
        history.append(MetricRow(int(epoch), split, float(value), float(wall)))
    return LoadedRun(ck.cfg, ck.params, tcfg, norm, state, done, ck.meta, history)
