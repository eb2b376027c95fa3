"""Tests for MLPs, Adam, Polyak averaging and checkpoint blobs."""

import os

import numpy as np
import pytest

from hifql import autodiff as ad
from hifql.errors import CheckpointError, ContractViolation
from hifql.nn import (
    AdamState,
    MlpSpec,
    ParamSet,
    adam_step,
    ema_update,
    init,
    load_params,
    mlp_forward,
    save_params,
)


class TestMlpSpec:
    """Tests for network specs."""

    def test_round_trip(self):
        spec = MlpSpec(4, (8, 8), 2, "relu", "tanh", layer_norm=True)
        assert MlpSpec.from_dict(spec.to_dict()) == spec

    def test_param_count(self):
        spec = MlpSpec(2, (4,), 1)
        assert spec.param_count() == 2 * 4 + 4 + 4 * 1 + 1
        assert init(spec, 0).count() == spec.param_count()

    def test_zero_dim_rejected(self):
        with pytest.raises(ContractViolation):
            MlpSpec(2, (0,), 1)

    def test_unknown_activation(self):
        with pytest.raises(ContractViolation):
            MlpSpec(2, (4,), 1, "sigmoid")


class TestInit:
    """Tests for parameter initialization."""

    def test_deterministic(self):
        spec = MlpSpec(2, (4,), 1)
        a, b = init(spec, 7), init(spec, 7)
        assert a.names == b.names
        for x, y in zip(a, b):
            assert np.array_equal(x.values, y.values)

    def test_biases_zero(self):
        params = init(MlpSpec(3, (5, 5), 2), 0)
        for name, t in params.items():
            if name.endswith("bias"):
                assert not t.values.any()

    def test_fan_in_bound(self):
        spec = MlpSpec(10, (100,), 10)
        params = init(spec, 1)
        w = params["l0.weight"].values
        assert w.size == 1000
        assert np.abs(w).max() <= np.sqrt(6.0 / 10)

    def test_unique_names(self):
        params = init(MlpSpec(2, (3, 3, 3), 1), 0)
        assert len(set(params.names)) == len(params)


class TestForward:
    """Tests for the MLP forward pass."""

    def test_zero_weights_give_zero(self):
        spec = MlpSpec(3, (4,), 2)
        params = init(spec, 0)
        for t in params:
            t.values[...] = 0.0
        out = mlp_forward(params, spec, np.ones((5, 3)))
        assert not out.values.any()

    def test_batch_shape(self):
        spec = MlpSpec(3, (4,), 2)
        out = mlp_forward(init(spec, 0), spec, np.ones((7, 3)))
        assert out.shape == (7, 2)

    def test_single_vector(self):
        spec = MlpSpec(3, (4,), 2)
        assert mlp_forward(init(spec, 0), spec, np.ones(3)).shape == (2,)

    def test_tanh_range(self):
        spec = MlpSpec(3, (16,), 4, final_activation="tanh")
        x = np.random.default_rng(0).standard_normal((64, 3)) * 10
        out = mlp_forward(init(spec, 0), spec, x).values
        assert np.all(np.abs(out) <= 1.0)

    def test_width_mismatch(self):
        spec = MlpSpec(3, (4,), 2)
        with pytest.raises(ContractViolation):
            mlp_forward(init(spec, 0), spec, np.ones((2, 4)))

    def test_layer_norm_runs(self):
        spec = MlpSpec(3, (8,), 2, layer_norm=True)
        out = mlp_forward(init(spec, 0), spec, np.ones((2, 3)))
        assert np.all(np.isfinite(out.values))


def _scalar(value):
    return ParamSet({"w": ad.parameter(np.array([value]))})


class TestAdam:
    """Tests for the Adam optimizer."""

    def test_zero_grads_leave_params(self):
        params = init(MlpSpec(2, (3,), 1), 0)
        before = [t.values.copy() for t in params]
        opt = AdamState.create(params, 1e-2)
        for t in params:
            t.grad = np.zeros_like(t.values)
        adam_step(opt, params)
        assert opt.step == 1
        for a, t in zip(before, params):
            assert np.array_equal(a, t.values)

    def test_grads_cleared(self):
        params = _scalar(1.0)
        opt = AdamState.create(params, 0.1)
        params["w"].grad = np.ones(1, dtype=np.float32)
        adam_step(opt, params)
        assert params["w"].grad is None

    def test_missing_grad(self):
        params = _scalar(1.0)
        opt = AdamState.create(params, 0.1)
        with pytest.raises(ContractViolation):
            adam_step(opt, params)

    def test_constant_grad_decreases(self):
        params = _scalar(0.0)
        opt = AdamState.create(params, 0.01)
        values = []
        for _ in range(20):
            params["w"].grad = np.ones(1, dtype=np.float32)
            adam_step(opt, params)
            values.append(float(params["w"].values[0]))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_quadratic_bowl(self):
        params = _scalar(0.0)
        w = params["w"]
        opt = AdamState.create(params, 0.1)
        for _ in range(500):
            with ad.Tape() as tape:
                loss = ad.reduce_sum(ad.square(ad.subtract(w, ad.constant(np.array([3.0])))))
            ad.backward(loss, tape)
            adam_step(opt, params)
        assert abs(float(w.values[0]) - 3.0) < 1e-2

    def test_zero_lr_is_bitwise_noop(self):
        params = init(MlpSpec(2, (3,), 1), 0)
        before = [t.values.copy() for t in params]
        opt = AdamState.create(params, 0.0)
        for t in params:
            t.grad = np.ones_like(t.values)
        adam_step(opt, params)
        for a, t in zip(before, params):
            assert np.array_equal(a, t.values)

    def test_step_counter_monotone(self):
        params = _scalar(0.0)
        opt = AdamState.create(params, 0.1)
        for expected in range(1, 4):
            params["w"].grad = np.ones(1, dtype=np.float32)
            adam_step(opt, params)
            assert opt.step == expected


class TestEma:
    """Tests for Polyak target updates."""

    def test_tau_one_copies(self):
        spec = MlpSpec(2, (3,), 1)
        target, online = init(spec, 0), init(spec, 1)
        ema_update(target, online, 1.0)
        for t, o in zip(target, online):
            assert np.array_equal(t.values, o.values)

    def test_tau_zero_keeps(self):
        spec = MlpSpec(2, (3,), 1)
        target, online = init(spec, 0), init(spec, 1)
        before = [t.values.copy() for t in target]
        ema_update(target, online, 0.0)
        for a, t in zip(before, target):
            assert np.array_equal(a, t.values)

    def test_small_tau_arithmetic(self):
        target, online = _scalar(0.0), _scalar(1.0)
        ema_update(target, online, 0.005)
        assert float(target["w"].values[0]) == pytest.approx(0.005)

    def test_contraction(self):
        spec = MlpSpec(2, (8,), 3)
        target, online = init(spec, 0), init(spec, 1)

        def dist():
            return np.sqrt(sum(np.sum((t.values.astype(np.float64) - o.values) ** 2)
                               for t, o in zip(target, online)))

        before = dist()
        ema_update(target, online, 0.1)
        assert dist() == pytest.approx(0.9 * before, rel=1e-5)

    def test_mismatch(self):
        with pytest.raises(ContractViolation):
            ema_update(init(MlpSpec(2, (3,), 1), 0), init(MlpSpec(2, (3, 3), 1), 0), 0.5)

    def test_tau_out_of_range(self):
        spec = MlpSpec(2, (3,), 1)
        with pytest.raises(ContractViolation):
            ema_update(init(spec, 0), init(spec, 1), 1.5)


class TestCheckpoint:
    """Tests for the manifest + blob checkpoint directory."""

    def test_round_trip_bitwise(self, tmp_path):
        spec = MlpSpec(3, (5,), 2, "relu")
        params = init(spec, 3)
        save_params(tmp_path / "a", params, spec, seed=3, step=10)
        spec2, loaded, manifest = load_params(tmp_path / "a")
        assert spec2 == spec
        assert manifest["step"] == 10
        save_params(tmp_path / "b", loaded, spec2, seed=3, step=10)
        assert (tmp_path / "a" / "params.bin").read_bytes() == (
            tmp_path / "b" / "params.bin"
        ).read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_text() == (
            tmp_path / "b" / "manifest.json"
        ).read_text()

    def test_overwrite_leaves_no_temp_dirs(self, tmp_path):
        spec = MlpSpec(2, (3,), 1)
        save_params(tmp_path / "ck", init(spec, 0), spec)
        save_params(tmp_path / "ck", init(spec, 1), spec)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["ck"]

    def test_overwrite_replaces_contents(self, tmp_path):
        spec = MlpSpec(2, (3,), 1)
        save_params(tmp_path / "ck", init(spec, 0), spec, step=1)
        fresh = init(spec, 1)
        save_params(tmp_path / "ck", fresh, spec, step=2)
        _, loaded, manifest = load_params(tmp_path / "ck")
        assert manifest["step"] == 2
        for a, b in zip(loaded, fresh):
            assert np.array_equal(a.values, b.values)

    def test_failed_swap_keeps_previous_checkpoint(self, tmp_path, monkeypatch):
        spec = MlpSpec(2, (3,), 1)
        save_params(tmp_path / "ck", init(spec, 0), spec, step=1)
        real_replace = os.replace
        calls = []

        def flaky_replace(src, dst):
            calls.append((src, dst))
            if len(calls) == 2:
                raise OSError("disk went away")
            return real_replace(src, dst)

        monkeypatch.setattr(os, "replace", flaky_replace)
        with pytest.raises(OSError):
            save_params(tmp_path / "ck", init(spec, 1), spec, step=2)
        monkeypatch.undo()
        _, _, manifest = load_params(tmp_path / "ck")
        assert manifest["step"] == 1
        assert sorted(p.name for p in tmp_path.iterdir()) == ["ck"]

    def test_truncated_blob(self, tmp_path):
        spec = MlpSpec(2, (3,), 1)
        path = save_params(tmp_path / "ck", init(spec, 0), spec)
        blob = path / "params.bin"
        blob.write_bytes(blob.read_bytes()[:-4])
        with pytest.raises(CheckpointError):
            load_params(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_params(tmp_path / "nothing")

    def test_blob_is_little_endian_float32(self, tmp_path):
        spec = MlpSpec(1, (1,), 1)
        params = init(spec, 0)
        path = save_params(tmp_path / "ck", params, spec)
        raw = np.frombuffer((path / "params.bin").read_bytes(), dtype="<f4")
        assert raw.size == spec.param_count()
