"""Train every ablation arm on the tiny trigonometric benchmark and tabulate test N-MSE."""

import argparse

from hafno import model
from hafno.data import dataset as dsmod
from hafno.training import TrainConfig, evaluate, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec, n_train, n_test = dsmod.preset("trig", "tiny")
    train_ds, test_ds = dsmod.build_dataset(spec, n_train, n_test, 0)
    base = model.tiny_config()
    print(f"{'arm':<14}{'params':>10}{'test N-MSE (x1e-2)':>22}")
    for arm in ("full",) + model.ABLATION_ARMS:
        cfg = base if arm == "full" else model.build_ablation(base, arm)
        res = train(cfg, model.init_params(cfg, args.seed), train_ds, TrainConfig(epochs=args.epochs, seed=args.seed))
        err = evaluate(cfg, res.params, test_ds, res.normalizer).nmse
        print(f"{arm:<14}{model.param_count(cfg):>10}{err * 100:>22.3f}", flush=True)


if __name__ == "__main__":
    main()
