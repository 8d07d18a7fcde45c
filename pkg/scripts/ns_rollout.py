"""Vorticity forecasting at toy scale: train on one-step windows, then roll out autoregressively.

Prints the N-MSE per rolled-out frame on the test trajectories.
"""

import argparse

import numpy as np

from hafno import model
from hafno.data import dataset as dsmod
from hafno.training import TrainConfig, model_step, nmse_values, rollout, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nu", type=float, default=1e-3)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    _, n_train, n_test = dsmod.preset("ns", "tiny")
    spec = dsmod.spec_for("ns", nu=args.nu)
    train_raw, test_raw = dsmod.build_dataset(spec, n_train, n_test, args.seed)
    windows = dsmod.ns_windows(train_raw)
    cfg = model.tiny_config(windows.inputs.shape[1], 1)
    res = train(cfg, model.init_params(cfg, args.seed), windows, TrainConfig(epochs=args.epochs, seed=args.seed))
    step = model_step(cfg, res.params, res.normalizer)
    steps = test_raw.targets.shape[1]
    window = test_raw.inputs.shape[1]
    preds = np.stack([rollout(step, frames, steps, window) for frames in test_raw.inputs])
    for k in range(steps):
        err = nmse_values(preds[:, k:k + 1], test_raw.targets[:, k:k + 1]).mean()
        print(f"frame {window + k + 1}: N-MSE {err:.4f}")


if __name__ == "__main__":
    main()
