"""Command-line entry point: generate, train, eval, rollout, diagnose.

Exit codes: 0 ok, 2 usage, 3 generation failure, 4 divergence, 5 config or
model mismatch, 6 missing file.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import os
import sys

import numpy as np

from . import diagnostics, model
from .core import ShapeError
from .data import dataset as dsmod
from .data.elliptic import SolverError
from .data.navier_stokes import CFLError, NSSpec
from .formats import FormatError, dataclass_to_dict, sections_text
from .training import (DivergenceError, TrainConfig, evaluate, load_training_checkpoint, model_step, nmse_values,
                       rollout, save_training_checkpoint, train, write_metrics_csv)

EXIT_OK, EXIT_USAGE, EXIT_GENERATION, EXIT_DIVERGENCE, EXIT_MISMATCH, EXIT_MISSING = 0, 2, 3, 4, 5, 6

CHECKPOINT_NAME = "checkpoint.hafn"
METRICS_NAME = "metrics.csv"
RUN_NAME = "run.ini"

PAPER_WARNING = ("warning: the paper preset targets accelerator-class hardware; "
                 "expect very long runtimes on a CPU\n")


class UsageError(Exception):
    pass


class MissingFile(Exception):
    pass


# Values used when neither the config file nor a flag sets an option.
DEFAULTS = {
    "generate": {"preset": "tiny", "seed": 0},
    "train": {"preset": "tiny", "task": "forward", "noise": 0.0, "baseline_fno": False},
    "eval": {"split": "test"},
    "rollout": {"split": "test", "steps": 10, "renormalize": False},
    "diagnose": {"split": "test", "bands": 8},
}


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hafno", description="Hierarchical attentive Fourier neural operator toolkit.")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="cap numerical library threads (default: $HAFNO_THREADS or 1)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("generate", help="generate a benchmark dataset",
                       description="Generate train/test dataset files for one benchmark.")
    g.add_argument("--benchmark", choices=dsmod.BENCHMARKS, help="benchmark family")
    g.add_argument("--preset", choices=("tiny", "paper"), help="size preset (default: tiny)")
    g.add_argument("--resolution", type=_positive_int, help="output grid side length (power of two)")
    g.add_argument("--n-train", type=_positive_int, help="number of training samples")
    g.add_argument("--n-test", type=_positive_int, help="number of test samples")
    g.add_argument("--seed", type=int, help="base seed; sample i uses seed + i (default: 0)")
    g.add_argument("--nu", type=float, help="viscosity (ns only)")
    g.add_argument("--horizon", type=_positive_int, help="recorded frames T (ns only)")
    g.add_argument("--out", help="output directory for train.hafd / test.hafd")
    g.add_argument("--config", help="INI file with a [generate] section")

    t = sub.add_parser("train", help="train a model on a dataset",
                       description="Train the model (or an ablation / FNO baseline) and write a checkpoint.")
    t.add_argument("--data", help="dataset directory produced by generate")
    t.add_argument("--out", help="output directory for checkpoint, metrics and run config")
    t.add_argument("--preset", choices=("tiny", "paper"), help="model size preset (default: tiny)")
    t.add_argument("--lr", type=float, help="learning rate (default: 5e-4)")
    t.add_argument("--batch", type=_positive_int, help="batch size (default: 10)")
    t.add_argument("--epochs", type=int, help="number of epochs (default: 100)")
    t.add_argument("--seed", type=int, help="seed for initialization and shuffling (default: 0)")
    t.add_argument("--schedule", choices=("cosine", "constant"), help="learning-rate schedule (default: cosine)")
    t.add_argument("--grad-clip", type=float, help="clip the global gradient norm to this value")
    t.add_argument("--ablation", choices=model.ABLATION_ARMS, help="train an ablation arm of the model")
    t.add_argument("--baseline-fno", type=_bool, nargs="?", const=True,
                   help="train the parameter-matched plain FNO instead")
    t.add_argument("--task", choices=("forward", "inverse"), help="inverse swaps direction: noisy u -> a")
    t.add_argument("--noise", type=_nonneg_float, help="relative noise level for the inverse task (default: 0)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--wall-time", type=_bool, nargs="?", const=True,
                   help="record measured wall seconds in the metrics CSV (default: 0.0 for reproducibility)")
    t.add_argument("--config", help="INI file with a [train] section")

    e = sub.add_parser("eval", help="evaluate a checkpoint",
                       description="Report N-MSE of a checkpoint on one dataset split.")
    e.add_argument("--checkpoint", help="checkpoint file")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--split", choices=("train", "test"), help="split to evaluate (default: test)")
    e.add_argument("--out", help="per-sample CSV path")
    e.add_argument("--config", help="INI file with an [eval] section")

    r = sub.add_parser("rollout", help="autoregressive vorticity prediction",
                       description="Roll a trained vorticity model forward from the first 10 frames.")
    r.add_argument("--checkpoint", help="checkpoint file")
    r.add_argument("--data", help="dataset directory of an ns benchmark")
    r.add_argument("--split", choices=("train", "test"), help="split to roll out (default: test)")
    r.add_argument("--steps", type=_positive_int, help="number of predicted frames (default: 10)")
    r.add_argument("--renormalize", type=_bool, nargs="?", const=True,
                   help="shift each predicted frame to zero mean before feeding it back")
    r.add_argument("--out", help="output file (dataset format)")
    r.add_argument("--config", help="INI file with a [rollout] section")

    d = sub.add_parser("diagnose", help="spectral error and equivariance report",
                       description="Write spectral error CSV/PGM files and an equivariance report.")
    d.add_argument("--checkpoint", help="checkpoint file (predictions are computed from it)")
    d.add_argument("--predictions", help="dataset-format file whose targets are predictions")
    d.add_argument("--data", help="dataset directory with the ground truth")
    d.add_argument("--split", choices=("train", "test"), help="split to compare (default: test)")
    d.add_argument("--bands", type=_positive_int, help="number of radial frequency bands (default: 8)")
    d.add_argument("--out", help="report directory")
    d.add_argument("--config", help="INI file with a [diagnose] section")
    return p


# ----------------------------------------------------------------- config

def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if name in action.choices:
            return action.choices[name]
    raise KeyError(name)


def resolve(parser: argparse.ArgumentParser, args: argparse.Namespace) -> dict[str, object]:
    """Effective options: built-in defaults, then the config file section, then explicit flags."""
    cmd = args.command
    sp = _subparser(parser, cmd)
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    values: dict[str, object] = dict(DEFAULTS.get(cmd, {}))
    if args.config:
        if not os.path.exists(args.config):
            raise MissingFile(f"config file not found: {args.config}")
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read(args.config, encoding="utf-8")
        except configparser.Error as exc:
            raise UsageError(f"cannot parse {args.config}: {exc}") from None
        unknown_sections = [s for s in cp.sections() if s not in DEFAULTS]
        if unknown_sections:
            raise UsageError(f"unknown config sections: {', '.join(unknown_sections)}")
        if cp.has_section(cmd):
            for key, text in cp.items(cmd):
                dest = key.replace("-", "_")
                if dest not in actions:
                    raise UsageError(f"unknown key {key!r} in [{cmd}] of {args.config}")
                action = actions[dest]
                conv = action.type or str
                try:
                    value = conv(text)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"bad value for {key}: {exc}") from None
                if action.choices is not None and value not in action.choices:
                    raise UsageError(f"{key} must be one of {', '.join(map(str, action.choices))}")
                values[dest] = value
    for dest in actions:
        v = getattr(args, dest, None)
        if v is not None:
            values[dest] = v
    return values


def _require(values: dict[str, object], *keys: str) -> None:
    missing = [k for k in keys if values.get(k) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _need_file(path: str) -> None:
    if not os.path.exists(path):
        raise MissingFile(f"file not found: {path}")


def _load_split(directory: str, split: str) -> dsmod.Dataset:
    path = dsmod.split_paths(directory)[split]
    _need_file(path)
    return dsmod.read_dataset(path)


# --------------------------------------------------------------- commands

def cmd_generate(v: dict[str, object]) -> int:
    _require(v, "benchmark", "out")
    bench = str(v["benchmark"])
    spec, n_train, n_test = dsmod.preset(bench, str(v["preset"]))
    if v["preset"] == "paper":
        sys.stderr.write(PAPER_WARNING)
    if v.get("resolution") is not None:
        res = int(v["resolution"])
        if res < 16 or res & (res - 1):
            raise UsageError(f"--resolution must be a power of two >= 16, got {res}")
        if isinstance(spec, NSSpec):
            spec = dataclasses.replace(spec, resolution=res)
        else:
            ratio = spec.solve_resolution // spec.resolution
            spec = dataclasses.replace(spec, resolution=res, solve_resolution=res * ratio)
    if isinstance(spec, NSSpec):
        try:
            if v.get("nu") is not None:
                spec = dataclasses.replace(spec, nu=float(v["nu"]))
            if v.get("horizon") is not None:
                spec = dataclasses.replace(spec, T=int(v["horizon"]))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    elif v.get("nu") is not None or v.get("horizon") is not None:
        raise UsageError("--nu and --horizon apply to the ns benchmark only")
    n_train = int(v["n_train"]) if v.get("n_train") is not None else n_train
    n_test = int(v["n_test"]) if v.get("n_test") is not None else n_test
    extra = {"benchmark": bench, "preset": v["preset"]}
    try:
        train_ds, test_ds = dsmod.build_dataset(spec, n_train, n_test, int(v["seed"]), extra)
    except (SolverError, CFLError, FloatingPointError, ValueError) as exc:
        sys.stderr.write(f"generation failed: {exc}\n")
        return EXIT_GENERATION
    try:
        paths = dsmod.save_splits(str(v["out"]), train_ds, test_ds)
    except OSError as exc:
        sys.stderr.write(f"cannot write dataset: {exc}\n")
        return EXIT_GENERATION
    for name, ds in (("train", train_ds), ("test", test_ds)):
        H, W = ds.resolution
        print(f"{name}: {len(ds)} samples at {H}x{W}, checksum {ds.manifest['checksum']} -> {paths[name]}")
    return EXIT_OK


# Noise seeds for the inverse task: sample i of a split gets seed + offset + i.
INVERSE_SEED_OFFSET = {"train": 0, "test": 1_000_000}


def _task_view(ds: dsmod.Dataset, split: str, task: str, eps: float, seed: int) -> dsmod.Dataset:
    if ds.manifest.get("spec.type") == "ns":
        if task == "inverse":
            raise UsageError("the inverse task applies to elliptic benchmarks only")
        return dsmod.ns_windows(ds)
    if task == "inverse":
        return dsmod.inverse_dataset(ds, eps, seed + INVERSE_SEED_OFFSET[split])
    return ds


def _model_config(v, c_in: int, c_out: int) -> model.ModelConfig:
    base = model.paper_config(c_in, c_out) if v["preset"] == "paper" else model.tiny_config(c_in, c_out)
    if v.get("baseline_fno"):
        if v.get("ablation"):
            raise UsageError("--baseline-fno and --ablation are mutually exclusive")
        return model.matched_fno_baseline(base)
    if v.get("ablation"):
        return model.build_ablation(base, str(v["ablation"]))
    return base


def cmd_train(v: dict[str, object]) -> int:
    _require(v, "data", "out")
    train_raw = _load_split(str(v["data"]), "train")
    test_raw = _load_split(str(v["data"]), "test")
    task, eps = str(v["task"]), float(v.get("noise") or 0.0)
    if eps > 0 and task != "inverse":
        raise UsageError("--noise applies to the inverse task only")
    resumed = None
    if v.get("resume"):
        _need_file(str(v["resume"]))
        resumed = load_training_checkpoint(str(v["resume"]))
    base = resumed.train_cfg if resumed is not None and resumed.train_cfg is not None else TrainConfig()
    overrides = {"lr": v.get("lr"), "batch_size": v.get("batch"), "epochs": v.get("epochs"),
                 "seed": v.get("seed"), "schedule": v.get("schedule"), "grad_clip": v.get("grad_clip"),
                 "wall_time": v.get("wall_time")}
    try:
        tcfg = dataclasses.replace(base, **{k: x for k, x in overrides.items() if x is not None})
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_ds = _task_view(train_raw, "train", task, eps, tcfg.seed)
    test_ds = _task_view(test_raw, "test", task, eps, tcfg.seed)
    c_in, c_out = train_ds.inputs.shape[1], train_ds.targets.shape[1]
    if v["preset"] == "paper":
        sys.stderr.write(PAPER_WARNING)
    state, normalizer, start = None, None, 0
    if resumed is not None:
        run = resumed
        cfg = run.cfg_model
        if (cfg.in_channels, cfg.out_channels) != (c_in, c_out):
            raise ShapeError(f"checkpoint model maps {cfg.in_channels}->{cfg.out_channels} channels, "
                             f"data has {c_in}->{c_out}")
        params, state, normalizer, start = run.params, run.state, run.normalizer, run.epochs_done
    else:
        cfg = _model_config(v, c_in, c_out)
        params = model.init_params(cfg, tcfg.seed)
    cfg.check_grid(*cfg.padded_shape(*train_ds.resolution))
    os.makedirs(str(v["out"]), exist_ok=True)
    run_info = {"arm": cfg.arm, "task": task, "noise": eps,
                "data_checksum": train_raw.manifest.get("checksum", ""),
                "benchmark": train_raw.manifest.get("benchmark", "")}
    result = train(cfg, params, train_ds, tcfg, val_ds=test_ds, state=state, normalizer=normalizer,
                   start_epoch=start)
    if resumed is not None:
        result.history = [r for r in resumed.history if r.epoch <= start] + result.history
    out = str(v["out"])
    save_training_checkpoint(os.path.join(out, CHECKPOINT_NAME), cfg, result, tcfg, run_info)
    write_metrics_csv(result.history, os.path.join(out, METRICS_NAME))
    with open(os.path.join(out, RUN_NAME), "w", encoding="utf-8") as fh:
        fh.write(sections_text({"cli": {k: x for k, x in v.items() if x is not None}, "train": dataclass_to_dict(tcfg),
                                "model": cfg.to_dict(), "run": run_info}))
    val = [r.nmse for r in result.history if r.split == "val"]
    final = val[-1] if val else evaluate(cfg, result.params, test_ds, result.normalizer).nmse
    print(f"model {cfg.arm}: {model.param_count(cfg)} parameters, {result.epochs_done} epochs")
    print(f"final val N-MSE {final:.6g} (x1e-2: {final * 100:.4g})")
    return EXIT_OK


def _predictions_from_checkpoint(path: str, ds: dsmod.Dataset, split: str) -> tuple[np.ndarray, dsmod.Dataset]:
    run = load_training_checkpoint(path)
    info = run.meta.get("run", {})
    seed = run.train_cfg.seed if run.train_cfg is not None else 0
    ds = _task_view(ds, split, info.get("task", "forward"), float(info.get("noise", "0")), seed)
    if (ds.inputs.shape[1], ds.targets.shape[1]) != (run.cfg_model.in_channels, run.cfg_model.out_channels):
        raise ShapeError(f"checkpoint maps {run.cfg_model.in_channels}->{run.cfg_model.out_channels} channels, "
                         f"data has {ds.inputs.shape[1]}->{ds.targets.shape[1]}")
    res = evaluate(run.cfg_model, run.params, ds, run.normalizer)
    return res.predictions, ds


def cmd_eval(v: dict[str, object]) -> int:
    _require(v, "checkpoint", "data")
    _need_file(str(v["checkpoint"]))
    ds = _load_split(str(v["data"]), str(v["split"]))
    pred, ds = _predictions_from_checkpoint(str(v["checkpoint"]), ds, str(v["split"]))
    per = nmse_values(pred, ds.targets)
    mean = float(per.mean())
    if v.get("out"):
        with open(str(v["out"]), "w", encoding="utf-8") as fh:
            fh.write("sample,nmse\n")
            for i, e in enumerate(per):
                fh.write(f"{i},{float(e)!r}\n")
    print(f"{v['split']}: N-MSE {mean:.6g} (x1e-2: {mean * 100:.4g}) over {len(per)} samples")
    return EXIT_OK


def cmd_rollout(v: dict[str, object]) -> int:
    _require(v, "checkpoint", "data", "out")
    _need_file(str(v["checkpoint"]))
    ds = _load_split(str(v["data"]), str(v["split"]))
    if ds.manifest.get("spec.type") != "ns":
        raise ShapeError("rollout needs an ns dataset")
    run = load_training_checkpoint(str(v["checkpoint"]))
    window = ds.inputs.shape[1]
    if run.cfg_model.in_channels != window or run.cfg_model.out_channels != 1:
        raise ShapeError(f"checkpoint maps {run.cfg_model.in_channels}->{run.cfg_model.out_channels} channels, "
                         f"rollout needs {window}->1")
    step = model_step(run.cfg_model, run.params, run.normalizer)
    steps = int(v["steps"])
    preds = np.stack([rollout(step, frames, steps, window, bool(v.get("renormalize"))) for frames in ds.inputs])
    manifest = dict(ds.manifest, task="rollout", steps=str(steps), count=str(len(preds)))
    out = dsmod.Dataset(ds.inputs.copy(), preds, manifest)
    out.manifest["checksum"] = dsmod.checksum(out)
    dsmod.write_dataset(out, str(v["out"]))
    k = min(steps, ds.targets.shape[1])
    err = nmse_values(preds[:, :k], ds.targets[:, :k]).mean()
    print(f"rolled out {len(preds)} trajectories x {steps} frames -> {v['out']}")
    print(f"N-MSE over the first {k} frames: {err:.6g} (x1e-2: {err * 100:.4g})")
    return EXIT_OK


def cmd_diagnose(v: dict[str, object]) -> int:
    _require(v, "data", "out")
    if bool(v.get("checkpoint")) == bool(v.get("predictions")):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    ds = _load_split(str(v["data"]), str(v["split"]))
    out = str(v["out"])
    os.makedirs(out, exist_ok=True)
    run = None
    if v.get("checkpoint"):
        _need_file(str(v["checkpoint"]))
        pred, ds = _predictions_from_checkpoint(str(v["checkpoint"]), ds, str(v["split"]))
        run = load_training_checkpoint(str(v["checkpoint"]))
    else:
        _need_file(str(v["predictions"]))
        pred = dsmod.read_dataset(str(v["predictions"])).targets
        if pred.shape != ds.targets.shape:
            raise ShapeError(f"predictions {pred.shape} do not match ground truth {ds.targets.shape}")
    report = diagnostics.spectral_error_map(pred, ds.targets, int(v["bands"]))
    diagnostics.write_error_csv(report, out)
    diagnostics.write_pgm(os.path.join(out, "spectral_error.pgm"), report.shifted_view)
    rows = [("fourier_rot90", diagnostics.check_fourier_group_commutation(ds.targets[0, 0], "rot90")),
            ("fourier_flip_x", diagnostics.check_fourier_group_commutation(ds.targets[0, 0], "flip_x")),
            ("fourier_flip_y", diagnostics.check_fourier_group_commutation(ds.targets[0, 0], "flip_y"))]
    if run is not None:
        s = 2 ** (run.cfg_model.K - 1)
        x = ds.inputs[:1]
        if run.cfg_model.in_channels == x.shape[1]:
            rows.append((f"model_shift_{s}_{2 * s}",
                         diagnostics.model_equivariance(run.cfg_model, run.params, run.normalizer.encode(x),
                                                        (s, 2 * s))))
    with open(os.path.join(out, "equivariance.csv"), "w", encoding="utf-8") as fh:
        fh.write("check,max_deviation\n")
        for name, dev in rows:
            fh.write(f"{name},{float(dev)!r}\n")
    print("band rel_error: " + " ".join(f"{b}:{e:.3g}" for b, e in enumerate(report.band_rel_error)))
    print(f"top-half band relative error {report.top_half_rel_error():.6g}")
    print(f"report written to {out}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "rollout": cmd_rollout,
            "diagnose": cmd_diagnose}


def _limit_threads(n: int | None):
    if n is None:
        env = os.environ.get("HAFNO_THREADS")
        n = int(env) if env else 1
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        values = resolve(parser, args)
        with _limit_threads(args.threads):
            return COMMANDS[args.command](values)
    except UsageError as exc:
        sys.stderr.write(f"hafno {args.command}: error: {exc}\n")
        return EXIT_USAGE
    except MissingFile as exc:
        sys.stderr.write(f"hafno {args.command}: {exc}\n")
        return EXIT_MISSING
    except DivergenceError as exc:
        sys.stderr.write(f"hafno {args.command}: training diverged: {exc}\n")
        return EXIT_DIVERGENCE
    except (ShapeError, FormatError, KeyError) as exc:
        sys.stderr.write(f"hafno {args.command}: mismatch: {exc}\n")
        return EXIT_MISMATCH


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
