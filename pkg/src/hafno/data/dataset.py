"""Benchmark specs, presets, dataset build/persist and the inverse-task transform."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from ..formats import (FormatError, Reader, dataclass_from_dict, dataclass_to_dict, fnv1a64, format_value,
                       manifest_text, parse_manifest, read_file, read_header, tensor_bytes, write_file, write_u16, write_u32)
from .coefficients import gen_trig_coefficient, sample_grf_periodic, sample_grf_twophase, sample_lognormal
from .elliptic import solve_elliptic_fd
from .fields import add_noise, downsample_field
from .navier_stokes import NSSpec, solve_ns_vorticity

DATASET_MAGIC = b"HAFD"
DATASET_VERSION = 1
GENERATOR_VERSION = "1"

BENCHMARKS = ("trig", "darcy-rough", "darcy-smooth", "ns")
KIND_OF = {"trig": "trigonometric", "darcy-rough": "two_phase", "darcy-smooth": "smooth"}


@dataclass(frozen=True)
class EllipticSpec:
    """Coefficients are sampled and solved at ``solve_resolution``, then both fields are downsampled."""

    kind: str = "trigonometric"
    resolution: int = 64
    solve_resolution: int = 128
    c: float = 9.0
    a_min: float = 3.0
    a_max: float = 12.0
    lognormal_scale: float = 4.0
    tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("trigonometric", "two_phase", "smooth"):
            raise ValueError(f"unknown elliptic kind {self.kind!r}")
        if self.resolution < 16:
            raise ValueError(f"resolution must be >= 16, got {self.resolution}")
        if self.solve_resolution < self.resolution:
            raise ValueError("solve_resolution must be >= resolution")
        if self.c <= 0 or not self.a_max > self.a_min > 0:
            raise ValueError("need c > 0 and a_max > a_min > 0")

    def coefficient(self, seed: int) -> np.ndarray:
        n = self.solve_resolution
        if self.kind == "trigonometric":
            return gen_trig_coefficient(seed, n)
        if self.kind == "two_phase":
            return sample_grf_twophase(seed, n, self.c, self.a_min, self.a_max)
        return sample_lognormal(seed, n, self.c, self.lognormal_scale)

Spec = EllipticSpec | NSSpec


def generate_sample(spec: Spec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One (input, target) pair, each ``[C, H, W]``; a pure function of (spec, seed)."""
    if isinstance(spec, NSSpec):
        rng = np.random.default_rng(seed)
        w0 = sample_grf_periodic(rng, spec.resolution, spec.w0_c, spec.w0_scale)
        w0 -= w0.mean()
        traj = solve_ns_vorticity(w0, spec)
        return traj[: spec.T0], traj[spec.T0:]
    a = spec.coefficient(seed)
    u = solve_elliptic_fd(a, tol=spec.tol)
    return downsample_field(a, spec.resolution).values, downsample_field(u, spec.resolution).values


# ---------------------------------------------------------------- presets

def preset(benchmark: str, name: str) -> tuple[Spec, int, int]:
    """(spec, n_train, n_test) for a named preset."""
    if benchmark not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {benchmark!r}")
    if name == "tiny":
        if benchmark == "ns":
            return NSSpec(nu=1e-3, resolution=64, dt=5e-3, T=20), 12, 4
        return EllipticSpec(KIND_OF[benchmark], 64, 128), 64, 16
    if name == "paper":
        if benchmark == "ns":
            return NSSpec(nu=1e-3, resolution=64, dt=5e-3, T=50), 1000, 200
        if benchmark == "trig":
            return EllipticSpec("trigonometric", 256, 1024), 1000, 100
        if benchmark == "darcy-rough":
            return EllipticSpec("two_phase", 256, 512), 1000, 100
        return EllipticSpec("smooth", 64, 128), 1000, 200
    raise ValueError(f"unknown preset {name!r}; expected tiny or paper")


def spec_for(benchmark: str, **overrides) -> Spec:
    """Tiny-preset spec of ``benchmark`` with fields replaced."""
    spec = preset(benchmark, "tiny")[0]
    return dataclasses.replace(spec, **overrides) if overrides else spec


# ---------------------------------------------------------------- dataset

@dataclass
class Dataset:
    inputs: np.ndarray  # [N, C_in, H, W]
    targets: np.ndarray  # [N, C_out, H, W]
    manifest: dict[str, str]

    def __post_init__(self):
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in sample count")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def samples(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.inputs, self.targets))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.inputs.shape[-2], self.inputs.shape[-1]

    @property
    def split(self) -> str:
        return self.manifest.get("split", "")

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.targets[idx], dict(self.manifest, count=str(len(idx))))


def spec_to_manifest(spec: Spec) -> dict[str, object]:
    kind = "ns" if isinstance(spec, NSSpec) else "elliptic"
    out: dict[str, object] = {"spec.type": kind}
    out.update({f"spec.{k}": v for k, v in dataclass_to_dict(spec).items()})
    return out


def spec_from_manifest(manifest: dict[str, str]) -> Spec:
    fields = {k[5:]: v for k, v in manifest.items() if k.startswith("spec.") and k != "spec.type"}
    cls = NSSpec if manifest.get("spec.type") == "ns" else EllipticSpec
    return dataclass_from_dict(cls, fields)


def _payload(inputs: np.ndarray, targets: np.ndarray) -> bytes:
    return b"".join(tensor_bytes(None, x) + tensor_bytes(None, y) for x, y in zip(inputs, targets))


def checksum(ds: Dataset) -> str:
    return f"{fnv1a64(_payload(ds.inputs, ds.targets)):016x}"


def generate_split(spec: Spec, count: int, seed: int, offset: int, split: str,
                   extra: dict[str, object] | None = None) -> Dataset:
    """Samples ``offset .. offset+count-1`` with per-sample seed ``seed + index``."""
    if count < 1:
        raise ValueError(f"sample count must be >= 1, got {count}")
    pairs = [generate_sample(spec, seed + offset + i) for i in range(count)]
    inputs = np.stack([p[0] for p in pairs])
    targets = np.stack([p[1] for p in pairs])
    manifest: dict[str, object] = {"seed": seed, "split": split, "count": count, "index_offset": offset,
                                   "resolution": inputs.shape[-1], "generator_version": GENERATOR_VERSION,
                                   "task": "forward"}
    manifest.update(spec_to_manifest(spec))
    manifest.update(extra or {})
    ds = Dataset(inputs, targets, {k: format_value(v) for k, v in manifest.items()})
    ds.manifest["checksum"] = checksum(ds)
    return ds


def build_dataset(spec: Spec, n_train: int, n_test: int, seed: int,
                  extra: dict[str, object] | None = None) -> tuple[Dataset, Dataset]:
    """Train samples take indices 0..n_train-1, test samples follow."""
    if n_train < 1 or n_test < 1:
        raise ValueError(f"need at least one train and one test sample, got {n_train}/{n_test}")
    train = generate_split(spec, n_train, seed, 0, "train", extra)
    test = generate_split(spec, n_test, seed, n_train, "test", extra)
    return train, test


def regenerate(manifest: dict[str, str]) -> Dataset:
    """Rebuild a forward-task split from its manifest."""
    if manifest.get("task", "forward") != "forward":
        raise ValueError("only forward-task datasets can be regenerated directly")
    spec = spec_from_manifest(manifest)
    known = {"seed", "split", "count", "index_offset", "resolution", "generator_version", "task", "checksum"}
    extra = {k: v for k, v in manifest.items() if k not in known and not k.startswith("spec.")}
    return generate_split(spec, int(manifest["count"]), int(manifest["seed"]), int(manifest["index_offset"]),
                          manifest["split"], extra)


def write_dataset(ds: Dataset, path) -> None:
    manifest = dict(ds.manifest, count=str(len(ds)), checksum=checksum(ds))
    text = manifest_text(manifest).encode("utf-8")
    write_file(path, [DATASET_MAGIC, write_u16(DATASET_VERSION), write_u32(len(text)), text,
                      _payload(ds.inputs, ds.targets)])


def read_dataset(path) -> Dataset:
    r = Reader(read_file(path))
    read_header(r, DATASET_MAGIC, DATASET_VERSION, "dataset")
    (n,) = r.unpack("<I")
    manifest = parse_manifest(r.take(n).decode("utf-8"))
    count = int(manifest.get("count", "0"))
    start = r.pos
    inputs, targets = [], []
    for _ in range(count):
        inputs.append(r.tensor(named=False)[1])
        targets.append(r.tensor(named=False)[1])
    if not r.at_end():
        raise FormatError("mismatch", f"dataset has {len(r.data) - r.pos} bytes beyond its {count} samples")
    got = f"{fnv1a64(r.data[start:]):016x}"
    if got != manifest.get("checksum"):
        raise FormatError("checksum", f"payload checksum {got} does not match manifest {manifest.get('checksum')}")
    if count == 0:
        raise FormatError("mismatch", "dataset holds no samples")
    return Dataset(np.stack(inputs), np.stack(targets), manifest)


def split_paths(directory) -> dict[str, str]:

    return {s: os.path.join(str(directory), f"{s}.hafd") for s in ("train", "test")}


def save_splits(directory, train: Dataset, test: Dataset) -> dict[str, str]:

    os.makedirs(str(directory), exist_ok=True)
    paths = split_paths(directory)
    write_dataset(train, paths["train"])
    write_dataset(test, paths["test"])
    return paths


# ---------------------------------------------------------------- derived tasks

def inverse_dataset(ds: Dataset, eps: float, seed: int) -> Dataset:
    """Swap direction: noisy solution -> coefficient. Sample i uses noise seed ``seed + i``."""
    noisy = np.stack([add_noise(u, eps, seed + i) for i, u in enumerate(ds.targets)])
    manifest = dict(ds.manifest, task="inverse", noise_eps=repr(float(eps)), noise_seed=str(seed))
    out = Dataset(noisy, ds.inputs.copy(), manifest)
    out.manifest["checksum"] = checksum(out)
    return out


def ns_windows(ds: Dataset, t0: int | None = None) -> Dataset:
    """One-step training pairs: each window of ``t0`` consecutive frames predicts the next frame."""
    frames = np.concatenate([ds.inputs, ds.targets], axis=1)
    t0 = ds.inputs.shape[1] if t0 is None else t0
    T = frames.shape[1]
    xs = [frames[:, s:s + t0] for s in range(T - t0)]
    ys = [frames[:, s + t0:s + t0 + 1] for s in range(T - t0)]
    inputs = np.concatenate(xs)
    targets = np.concatenate(ys)
    return Dataset(inputs, targets, dict(ds.manifest, task="ns_windows", count=str(len(inputs))))
