"""Trainer: trajectories, schedules, replay, on-disk round trips."""

import os

import numpy as np
import pytest

import datatrace as dt
from datatrace.exceptions import ConfigError, DivergenceError, ReplayDivergenceError
from conftest import bias_only_probe, ridge_probe


def test_geometric_contraction_on_pure_quadratic():
    # loss 0.5*b^2 (zero inputs, zero target): b_t = 0.9^t from b_0 = 1
    spec, data = bias_only_probe([0.0])
    cfg = dt.TrainingConfig(epochs=10, batch_size=0, initial_lr=0.1, seed=0)
    rec = dt.train(spec, data, cfg, init=np.array([0.0, 1.0]))
    assert abs(rec.final_params[1] - 0.9**10) <= 1e-12
    assert abs(rec.final_params[1] - 0.348678) <= 1e-6
    assert rec.final_params[0] == 0.0


def test_full_batch_equals_batch_size_n():
    spec = dt.ModelSpec("logistic_regression", (4, 2))
    ds = dt.synth_gaussian(2, 10, 4, 2.0, 1)
    base = dict(epochs=20, initial_lr=0.05, momentum=0.5, weight_decay=0.01, seed=3)
    rec_full = dt.train(spec, ds, dt.TrainingConfig(batch_size=0, **base))
    rec_n = dt.train(spec, ds, dt.TrainingConfig(batch_size=len(ds), **base))
    assert np.allclose(rec_full.final_params, rec_n.final_params, atol=1e-12)


def test_ridge_probe_converges_to_regularized_minimizer():
    # output c = W + b with x = 1; minimizer c* = mean(a) / (1 + lambda/2)
    spec, train, _ = ridge_probe(targets=(0.0, 2.0))
    cfg = dt.TrainingConfig(epochs=200, batch_size=0, initial_lr=0.1, weight_decay=0.1, seed=0)
    rec = dt.train(spec, train, cfg, init=np.zeros(2))
    c = rec.final_params.sum()
    assert abs(c - 1.0 / 1.05) <= 1e-6


def test_training_is_deterministic():
    spec = dt.ModelSpec("mlp", (4, 5, 2))
    ds = dt.synth_gaussian(2, 12, 4, 2.0, 2)
    cfg = dt.TrainingConfig(epochs=15, batch_size=4, initial_lr=0.05,
                            momentum=0.9, weight_decay=0.01, seed=11)
    a = dt.train(spec, ds, cfg)
    b = dt.train(spec, ds, cfg)
    assert np.array_equal(a.final_params, b.final_params)
    assert a.checksum() == b.checksum()


def test_replay_is_bit_identical_and_detects_tampering():
    spec = dt.ModelSpec("logistic_regression", (4, 2))
    ds = dt.synth_gaussian(2, 10, 4, 2.0, 1)
    cfg = dt.TrainingConfig(epochs=10, batch_size=4, initial_lr=0.05, seed=5)
    rec = dt.train(spec, ds, cfg)
    again = dt.replay(rec, ds)
    assert np.array_equal(rec.final_params, again.final_params)
    rec.snapshots[max(rec.snapshots)] = rec.snapshots[max(rec.snapshots)] + 1.0
    with pytest.raises(ReplayDivergenceError):
        dt.replay(rec, ds)


def test_replay_with_perturbed_weights_skips_check():
    spec = dt.ModelSpec("logistic_regression", (4, 2))
    ds = dt.synth_gaussian(2, 10, 4, 2.0, 1)
    cfg = dt.TrainingConfig(epochs=10, batch_size=0, initial_lr=0.05, seed=5)
    rec = dt.train(spec, ds, cfg)
    w = np.zeros(len(ds))
    w[0] = 1e-3
    out = dt.replay(rec, ds, data_weights=w)
    assert not np.array_equal(out.final_params, rec.final_params)


def test_exponential_schedule_is_exactly_geometric_per_step():
    spec = dt.ModelSpec("logistic_regression", (4, 2))
    ds = dt.synth_gaussian(2, 10, 4, 2.0, 1)
    cfg = dt.TrainingConfig(epochs=5, batch_size=5, initial_lr=0.2,
                            schedule=dt.ExponentialSchedule(0.9), seed=0)
    rec = dt.train(spec, ds, cfg)
    assert np.all(rec.lrs[1:] == rec.lrs[:-1] * 0.9)


def test_step_decay_schedule():
    spec = dt.ModelSpec("logistic_regression", (4, 2))
    ds = dt.synth_gaussian(2, 10, 4, 2.0, 1)
    cfg = dt.TrainingConfig(epochs=4, batch_size=0, initial_lr=0.1,
                            schedule=dt.StepDecaySchedule(0.5, 3), seed=0)
    rec = dt.train(spec, ds, cfg)
    assert np.allclose(rec.lrs, [0.1, 0.1, 0.05, 0.05])


def test_plateau_schedule_reduces_lr_when_stuck():
    # zero-input probe with b already at the minimum: loss never improves
    spec, data = bias_only_probe([0.0, 0.0])
    cfg = dt.TrainingConfig(
        epochs=8, batch_size=0, initial_lr=0.1,
        schedule=dt.ReduceOnPlateauSchedule(0.5, patience=2), seed=0,
    )
    rec = dt.train(spec, data, cfg, init=np.zeros(2))
    assert rec.lrs[-1] < rec.lrs[0]


def test_schedule_string_round_trip():
    for sched in (
        dt.ConstantSchedule(),
        dt.StepDecaySchedule(0.5, 3),
        dt.ExponentialSchedule(0.99),
        dt.ReduceOnPlateauSchedule(0.1, patience=3, rel_threshold=1e-3),
    ):
        assert dt.schedule_from_string(sched.describe()) == sched


def test_config_invariants():
    with pytest.raises(ConfigError):
        dt.TrainingConfig(epochs=0, batch_size=0, initial_lr=0.1)
    with pytest.raises(ConfigError):
        dt.TrainingConfig(epochs=1, batch_size=0, initial_lr=2.0, weight_decay=0.5)
    with pytest.raises(ConfigError):
        dt.TrainingConfig(epochs=1, batch_size=0, initial_lr=0.1, momentum=1.0)


def test_divergence_aborts_with_step_index():
    spec, data = bias_only_probe([0.0])
    cfg = dt.TrainingConfig(epochs=200, batch_size=0, initial_lr=3.0, seed=0)
    with pytest.raises(DivergenceError) as err:
        dt.train(spec, data, cfg, init=np.array([0.0, 1.0]))
    assert err.value.step > 0


def test_batch_schedule_partitions_each_epoch():
    batches = dt.build_batch_schedule(10, 3, 2, seed=4)
    assert len(batches) == 8  # ceil(10/3) = 4 per epoch
    for epoch in range(2):
        seen = np.concatenate(batches[epoch * 4 : (epoch + 1) * 4])
        assert sorted(seen) == list(range(10))


def test_trajectory_save_load_round_trip(tmp_path):
    spec = dt.ModelSpec("mlp", (4, 5, 2))
    ds = dt.synth_gaussian(2, 12, 4, 2.0, 2)
    cfg = dt.TrainingConfig(epochs=6, batch_size=5, initial_lr=0.05,
                            schedule=dt.ExponentialSchedule(0.98),
                            momentum=0.9, weight_decay=0.01, seed=11)
    rec = dt.train(spec, ds, cfg)
    d = str(tmp_path / "traj")
    dt.save_trajectory(rec, d)
    back = dt.load_trajectory(d)
    assert back.checksum() == rec.checksum()
    assert np.array_equal(back.final_params, rec.final_params)
    assert np.array_equal(back.lrs, rec.lrs)
    assert all(np.array_equal(a, b) for a, b in zip(back.batches, rec.batches))
    assert back.config == rec.config
    # corrupting the snapshot blob is caught by the stored checksum
    blob = os.path.join(d, "snapshots.bin")
    raw = bytearray(open(blob, "rb").read())
    raw[8] ^= 0xFF
    open(blob, "wb").write(bytes(raw))
    with pytest.raises(ReplayDivergenceError):
        dt.load_trajectory(d)


def test_snapshot_stride():
    spec = dt.ModelSpec("logistic_regression", (4, 2))
    ds = dt.synth_gaussian(2, 10, 4, 2.0, 1)
    cfg = dt.TrainingConfig(epochs=4, batch_size=5, initial_lr=0.05, seed=0,
                            snapshot_stride=3)
    rec = dt.train(spec, ds, cfg)  # 20 samples, 4 batches/epoch, 16 steps
    assert set(rec.snapshots) == {0, 3, 6, 9, 12, 15, 16}
