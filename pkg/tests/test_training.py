import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hafno import core, model
from hafno.data.dataset import Dataset
from hafno.training import (DivergenceError, Normalizer, OptimizerState, TrainConfig, adam_step, evaluate,
                            learning_rate, load_training_checkpoint, nmse, nmse_values, read_metrics_csv, rollout,
                            save_training_checkpoint, train, write_metrics_csv)

SMALL = model.ModelConfig(channels=(4, 4, 8, 8), modes=(4, 3, 2, 1), head_hidden=8)


def _toy(n=4, res=64, seed=0):
    rng = np.random.default_rng(seed)
    t = (np.arange(res) + 0.5) / res
    a = np.stack([1 + 0.5 * np.sin(2 * np.pi * (k + 1) * t)[None, :] * np.cos(2 * np.pi * t)[:, None]
                  for k in range(n)])[:, None]
    u = np.stack([np.sin(np.pi * t)[None, :] * np.sin(np.pi * t)[:, None] * (1 + 0.1 * k) for k in range(n)])[:, None]
    a = a + 0.01 * rng.standard_normal(a.shape)
    return Dataset(a, u, {"split": "train"})


# ------------------------------------------------------------------ nmse

def test_nmse_fixed_points(rng):
    u = rng.standard_normal((3, 1, 8, 8))
    assert float(nmse(u, u).value) == 0.0
    assert float(nmse(np.zeros_like(u), u).value) == pytest.approx(1.0)
    p = u + 0.1 * rng.standard_normal(u.shape)
    assert float(nmse(7.3 * p, 7.3 * u).value) == pytest.approx(float(nmse(p, u).value), rel=1e-12)


def test_nmse_definition_and_zero_truth(rng):
    p = rng.standard_normal((2, 1, 4, 4))
    u = rng.standard_normal((2, 1, 4, 4))
    ref = np.mean([np.linalg.norm(p[i] - u[i]) / np.linalg.norm(u[i]) for i in range(2)])
    assert float(nmse(p, u).value) == pytest.approx(ref, rel=1e-14)
    u[1] = 0
    with pytest.raises(ValueError, match="sample 1"):
        nmse_values(p, u)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 100.0))
def test_nmse_nonnegative_and_homogeneous(seed, c):
    r = np.random.default_rng(seed)
    p, u = r.standard_normal((2, 2, 1, 4, 4))
    e = nmse_values(p, u)
    assert np.all(e >= 0)
    np.testing.assert_allclose(nmse_values(c * p, c * u), e, rtol=1e-12)


def test_nmse_gradient(rng):
    from hafno.diagnostics import gradcheck

    u = rng.standard_normal((3, 1, 6, 6))
    err, _ = gradcheck(lambda n: nmse(n[0], u), [u + rng.standard_normal(u.shape)], rng)
    assert err < 1e-6


# ------------------------------------------------------------------ adam

def test_adam_zero_grad_and_first_step():
    p = {"w": core.leaf(np.array([1.0, -2.0]))}
    s = OptimizerState.zeros(p)
    adam_step(p, s, 0.1)
    np.testing.assert_array_equal(p["w"].value, [1.0, -2.0])
    assert s.step == 1
    q = {"w": core.leaf(np.array([0.5]))}
    q["w"].grad = np.array([-3.0])
    adam_step(q, OptimizerState.zeros(q), 1e-3)
    assert q["w"].value[0] == pytest.approx(0.5 + 1e-3, rel=1e-6)


def test_adam_quadratic_bowl():
    x = {"x": core.leaf(np.array([1.0]))}
    s = OptimizerState.zeros(x)
    for _ in range(3000):
        core.zero_grad(x.values())
        core.backward(core.sum_all(x["x"] * x["x"]))
        adam_step(x, s, 5e-4)
    assert abs(x["x"].value[0]) < 0.1


def test_adam_nan_gradient_names_parameter():
    p = {"head.w1": core.leaf(np.ones(2))}
    p["head.w1"].grad = np.array([np.nan, 0.0])
    with pytest.raises(FloatingPointError, match="head.w1"):
        adam_step(p, OptimizerState.zeros(p), 1e-3)


def test_grad_clip_bounds_first_step():
    p = {"a": core.leaf(np.zeros(4))}
    p["a"].grad = np.full(4, 100.0)
    s = OptimizerState.zeros(p)
    adam_step(p, s, 1e-2, grad_clip=1.0)
    # Adam normalizes the magnitude; clipping must leave the direction intact
    assert np.all(p["a"].value < 0)


def test_learning_rate_schedule():
    cfg = TrainConfig(lr=1e-3, lr_min=1e-5)
    assert learning_rate(cfg, 0, 100) == pytest.approx(1e-3)
    assert learning_rate(cfg, 100, 100) == pytest.approx(1e-5)
    assert learning_rate(cfg, 50, 100) == pytest.approx(0.5 * (1e-3 + 1e-5))
    assert learning_rate(dataclasses.replace(cfg, schedule="constant"), 77, 100) == 1e-3


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


# ------------------------------------------------------------------ loop

def test_training_is_deterministic_and_logs_rows():
    ds = _toy()
    cfg = TrainConfig(epochs=3, batch_size=2, seed=5)
    runs = [train(SMALL, model.init_params(SMALL, 1), ds, cfg) for _ in range(2)]
    h1 = [(r.epoch, r.split, r.nmse) for r in runs[0].history]
    h2 = [(r.epoch, r.split, r.nmse) for r in runs[1].history]
    assert h1 == h2 and [r[0] for r in h1] == [1, 2, 3]
    assert all(r.split == "train" and r.wall_seconds == 0.0 for r in runs[0].history)
    assert h1[-1][2] < h1[0][2]


def test_empty_val_split_is_absent_not_zero():
    ds = _toy()
    empty = Dataset(ds.inputs[:0], ds.targets[:0], {})
    res = train(SMALL, model.init_params(SMALL), ds, TrainConfig(epochs=1, batch_size=4), val_ds=empty)
    assert [r.split for r in res.history] == ["train"]
    res = train(SMALL, model.init_params(SMALL), ds, TrainConfig(epochs=1, batch_size=4), val_ds=ds.subset([0]))
    assert [r.split for r in res.history] == ["train", "val"]


def test_gradient_reaches_every_module():
    ds = _toy(2)
    params = model.init_params(SMALL, 2)
    norm = Normalizer.fit(ds)
    from hafno.training import predict

    core.backward(nmse(predict(SMALL, params, norm, ds.inputs), ds.targets))
    groups = {"lift": "lift.", "attention": ".att.", "spectral": ".R.", "conv": ".conv.", "head": "head.",
              "down": "down", "up": "up"}
    for group, key in groups.items():
        grads = [p.grad for n, p in params.items() if key in n and p.grad is not None]
        assert grads and any(np.any(g != 0) for g in grads), group


def test_divergence_guard():
    ds = _toy()
    with pytest.raises(DivergenceError):
        train(SMALL, model.init_params(SMALL), ds, TrainConfig(epochs=3, batch_size=1, lr=50.0, divergence_factor=1.5))


def test_evaluate_is_side_effect_free_and_consistent():
    ds = _toy()
    params = model.init_params(SMALL, 3)
    before = {n: p.value.copy() for n, p in params.items()}
    res = evaluate(SMALL, params, ds, Normalizer.fit(ds), batch_size=3)
    assert all(np.array_equal(before[n], p.value) for n, p in params.items())
    assert res.nmse == pytest.approx(res.per_sample.mean(), rel=1e-15)
    assert res.predictions.shape == ds.targets.shape
    with pytest.raises(Exception):
        evaluate(dataclasses.replace(SMALL, in_channels=2), model.init_params(dataclasses.replace(SMALL, in_channels=2)),
                 ds, Normalizer.fit(ds))


def test_identity_model_gives_zero_error():
    """Zero network plus a normalizer whose decode is the identity recovers u when a == u is impossible,
    so test the metric path directly: a predictor returning the target yields zero."""
    ds = _toy()
    cfg = model.ModelConfig(channels=(4,), modes=(2,), attention="none", fourier=False, residual="res", head_hidden=4)
    params = model.zeros_like_params(cfg)
    # output = head bias; with out_std = 0 and out_mean = truth this is exact for a constant-target set
    const = Dataset(ds.inputs, np.full_like(ds.targets, 2.0), {})
    norm = Normalizer.fit(const)
    assert evaluate(cfg, params, const, norm).nmse == 0.0


# ------------------------------------------------------------------ rollout

def test_rollout_repeat_last_frame():
    frames = np.random.default_rng(0).standard_normal((10, 8, 8))
    out = rollout(lambda f: f[-1], frames, 5)
    assert out.shape == (5, 8, 8)
    for k in range(5):
        np.testing.assert_array_equal(out[k], frames[-1])


def test_rollout_sliding_window_and_errors():
    frames = np.arange(10.0)[:, None, None] * np.ones((10, 2, 2))
    out = rollout(lambda f: f[-1] + 1, frames, 4)
    np.testing.assert_array_equal(out[:, 0, 0], [10, 11, 12, 13])
    avg = rollout(lambda f: f.mean(axis=0), frames, 2)
    assert avg[0, 0, 0] == pytest.approx(4.5) and avg[1, 0, 0] == pytest.approx((45 - 0 + 4.5) / 10)
    with pytest.raises(ValueError):
        rollout(lambda f: f[-1], frames, 0)
    with pytest.raises(Exception):
        rollout(lambda f: f[-1], frames[:9], 3)
    shifted = rollout(lambda f: f[-1] + 1, frames, 1, renormalize=True)
    assert shifted.mean() == 0.0


# ------------------------------------------------------------------ persistence

def test_metrics_csv_round_trip(tmp_path):
    ds = _toy()
    res = train(SMALL, model.init_params(SMALL), ds, TrainConfig(epochs=2, batch_size=2), val_ds=ds)
    path = tmp_path / "m.csv"
    write_metrics_csv(res.history, path)
    assert path.read_text().splitlines()[0] == "epoch,split,nmse,wall_seconds"
    assert read_metrics_csv(path) == res.history


def test_checkpoint_round_trip_and_resume(tmp_path):
    ds = _toy()
    cfg = TrainConfig(epochs=4, batch_size=2, seed=3)
    full = train(SMALL, model.init_params(SMALL, 0), ds, cfg)
    path = tmp_path / "ck.hafn"

    class Stop(Exception):
        pass

    def stop_after_two(res):
        if res.epochs_done == 2:
            save_training_checkpoint(path, SMALL, res, cfg)
            raise Stop

    with pytest.raises(Stop):
        train(SMALL, model.init_params(SMALL, 0), ds, cfg, on_epoch=stop_after_two)
    run = load_training_checkpoint(path, expect=SMALL)
    assert run.epochs_done == 2 and run.train_cfg == cfg and run.state.step == 4
    assert run.history == full.history[:2]
    resumed = train(SMALL, run.params, ds, run.train_cfg, state=run.state, normalizer=run.normalizer,
                    start_epoch=run.epochs_done)
    for name in full.params:
        assert full.params[name].value.tobytes() == resumed.params[name].value.tobytes()
    assert [r.nmse for r in full.history[2:]] == [r.nmse for r in resumed.history]
    wrong = dataclasses.replace(SMALL, channels=(4, 4, 8), modes=(4, 3, 2))
    with pytest.raises(Exception):
        load_training_checkpoint(path, expect=wrong)
