"""Encoder, Adam, warmup, and checkpoint tests."""

import numpy as np
import pytest

from ccreid.autodiff import Tape
from ccreid.encoder import (
    EncoderParams,
    LrSchedule,
    OptimizerState,
    adam_step,
    encode,
    encode_batch,
    init_encoder,
    init_optimizer,
    load_checkpoint,
    save_checkpoint,
    warmup_lr,
)
from ccreid.errors import (
    CheckpointFormatError,
    DimensionMismatchError,
    InvalidConfigError,
    NonFiniteGradientError,
    ShapeMismatchError,
    ZeroVectorError,
)

from helpers import FD_STEP, central_difference, relative_error


def make_params(widths=(16, 32, 64), seed=0):
    return init_encoder(list(widths), np.random.default_rng(seed))


class TestEncoderForward:
    def test_output_width(self):
        params = make_params((16, 32, 64))
        assert params.widths == [16, 32, 64]
        out = encode_batch(params, np.random.default_rng(1).standard_normal((7, 16)))
        assert out.shape == (7, 64)

    def test_outputs_unit_norm(self):
        params = make_params()
        out = encode_batch(params, np.random.default_rng(2).standard_normal((20, 16)))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)

    def test_single_vector_matches_batch(self):
        params = make_params()
        x = np.random.default_rng(3).standard_normal(16)
        np.testing.assert_array_equal(encode(params, x), encode_batch(params, x[None])[0])

    def test_tape_and_plain_paths_agree_bitwise(self):
        params = make_params()
        x = np.random.default_rng(4).standard_normal((9, 16))
        plain = encode_batch(params, x)
        tape = Tape()
        node = encode_batch(params, x, tape)
        np.testing.assert_array_equal(plain, node.value)

    def test_init_deterministic(self):
        a = make_params(seed=11)
        b = make_params(seed=11)
        for ta, tb in zip(a.tensors(), b.tensors()):
            np.testing.assert_array_equal(ta, tb)

    def test_init_scaled_by_fan_in(self):
        params = make_params((100, 4), seed=5)
        bound = 1.0 / np.sqrt(100)
        assert np.all(np.abs(params.weights[0]) <= bound)
        assert np.any(np.abs(params.weights[0]) > 0.5 * bound)

    def test_all_zero_weights_rejected(self):
        with pytest.raises(InvalidConfigError):
            EncoderParams(weights=[np.zeros((4, 3))], biases=[np.zeros(3)])

    def test_zero_input_with_zero_bias_hits_zero_vector(self):
        params = make_params((8, 8))
        params.biases[0][:] = 0.0
        with pytest.raises(ZeroVectorError):
            encode(params, np.zeros(8))

    def test_dimension_mismatch(self):
        params = make_params()
        with pytest.raises(DimensionMismatchError):
            encode_batch(params, np.zeros((3, 7)))

    def test_gradients_match_finite_differences(self):
        params = make_params((10, 12, 8), seed=6)
        x = np.random.default_rng(7).standard_normal((5, 10))
        target = np.random.default_rng(8).standard_normal((5, 8))

        def loss_and_grads():
            tape = Tape()
            node = encode_batch(params, x, tape)
            root = tape.mean(tape.mul(node, target))
            tape.backward(root)
            return float(root.value), [tape.gradient(leaf) for leaf in tape.leaves]

        value, grads = loss_and_grads()
        rng = np.random.default_rng(9)
        tensors = params.tensors()
        for _ in range(60):
            which = int(rng.integers(len(tensors)))
            tensor, grad = tensors[which], grads[which]
            flat_index = int(rng.integers(tensor.size))
            index = np.unravel_index(flat_index, tensor.shape)
            numeric = central_difference(
                lambda: loss_and_grads()[0], tensor, index, FD_STEP
            )
            assert relative_error(grad[index], numeric) <= 1e-4


class TestAdam:
    def test_zero_gradient_no_decay_is_identity(self):
        params = make_params((6, 4))
        state = init_optimizer(params)
        before = [t.copy() for t in params.tensors()]
        grads = [np.zeros_like(t) for t in params.tensors()]
        adam_step(state, params, grads, lr=0.1)
        for b, t in zip(before, params.tensors()):
            np.testing.assert_array_equal(b, t)

    def test_first_step_is_sign_like(self):
        params = make_params((3, 2), seed=1)
        state = init_optimizer(params)
        before = [t.copy() for t in params.tensors()]
        grads = [np.full_like(t, 0.5) for t in params.tensors()]
        adam_step(state, params, grads, lr=0.01)
        for b, t in zip(before, params.tensors()):
            # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            expected = b - 0.01 * 0.5 / (0.5 + 1e-8)
            np.testing.assert_allclose(t, expected, atol=1e-12)

    def test_two_step_recurrence_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        params = make_params((4, 3), seed=2)
        state = init_optimizer(params, weight_decay=0.0005)
        shadow = [t.copy() for t in params.tensors()]
        m = [np.zeros_like(t) for t in shadow]
        v = [np.zeros_like(t) for t in shadow]
        for step in range(1, 3):
            grads = [rng.standard_normal(t.shape) for t in params.tensors()]
            adam_step(state, params, grads, lr=0.003)
            for i in range(len(shadow)):
                g = grads[i] + 0.0005 * shadow[i]
                m[i] = 0.9 * m[i] + 0.1 * g
                v[i] = 0.999 * v[i] + 0.001 * g * g
                m_hat = m[i] / (1.0 - 0.9 ** step)
                v_hat = v[i] / (1.0 - 0.999 ** step)
                shadow[i] = shadow[i] - 0.003 * m_hat / (np.sqrt(v_hat) + 1e-8)
        for s, t in zip(shadow, params.tensors()):
            np.testing.assert_allclose(s, t, atol=1e-12)

    def test_weight_decay_applies_to_biases(self):
        params = make_params((5, 4))
        params.biases[0][:] = 0.7
        state = init_optimizer(params, weight_decay=0.1)
        bias_before = params.biases[0].copy()
        grads = [np.zeros_like(t) for t in params.tensors()]
        adam_step(state, params, grads, lr=0.01)
        assert not np.array_equal(params.biases[0], bias_before)

    def test_non_finite_gradient_rejected(self):
        params = make_params((4, 2))
        state = init_optimizer(params)
        grads = [np.zeros_like(t) for t in params.tensors()]
        grads[1][0] = np.nan
        with pytest.raises(NonFiniteGradientError):
            adam_step(state, params, grads, lr=0.01)

    def test_shape_mismatch_rejected(self):
        params = make_params((4, 2))
        state = init_optimizer(params)
        grads = [np.zeros_like(t) for t in params.tensors()]
        grads[0] = np.zeros((2, 2))
        with pytest.raises(ShapeMismatchError):
            adam_step(state, params, grads, lr=0.01)

    def test_step_counter_advances(self):
        params = make_params((4, 2))
        state = init_optimizer(params)
        grads = [np.ones_like(t) for t in params.tensors()]
        adam_step(state, params, grads, lr=0.01)
        adam_step(state, params, grads, lr=0.01)
        assert state.step == 2


class TestWarmup:
    def test_linear_ramp(self):
        schedule = LrSchedule(base_lr=0.00035, warmup_epochs=20)
        assert warmup_lr(schedule, 1) == pytest.approx(0.00035 / 20)
        assert warmup_lr(schedule, 10) == pytest.approx(0.000175)
        assert warmup_lr(schedule, 20) == pytest.approx(0.00035)

    def test_flat_after_warmup(self):
        schedule = LrSchedule(base_lr=0.00035, warmup_epochs=20)
        for epoch in (21, 50, 120):
            assert warmup_lr(schedule, epoch) == 0.00035

    def test_monotone_during_warmup(self):
        schedule = LrSchedule(base_lr=0.1, warmup_epochs=7)
        values = [warmup_lr(schedule, e) for e in range(1, 12)]
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_bad_inputs(self):
        with pytest.raises(InvalidConfigError):
            LrSchedule(base_lr=0.0, warmup_epochs=5)
        with pytest.raises(InvalidConfigError):
            LrSchedule(base_lr=0.1, warmup_epochs=0)
        with pytest.raises(InvalidConfigError):
            warmup_lr(LrSchedule(0.1, 5), 0)


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        params = make_params((16, 32, 64), seed=3)
        state = init_optimizer(params, weight_decay=0.0005)
        grads = [np.random.default_rng(4).standard_normal(t.shape)
                 for t in params.tensors()]
        adam_step(state, params, grads, lr=0.001)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, state)
        loaded_params, loaded_state = load_checkpoint(path)
        assert loaded_params.widths == params.widths
        for a, b in zip(params.tensors(), loaded_params.tensors()):
            np.testing.assert_array_equal(a, b)
        assert loaded_state.step == 1
        assert loaded_state.weight_decay == 0.0005
        for a, b in zip(state.first_moment, loaded_state.first_moment):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(state.second_moment, loaded_state.second_moment):
            np.testing.assert_array_equal(a, b)

    def test_params_only_round_trip(self, tmp_path):
        params = make_params((8, 4), seed=5)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        loaded, state = load_checkpoint(path)
        assert state is None
        for a, b in zip(params.tensors(), loaded.tensors()):
            np.testing.assert_array_equal(a, b)

    def test_bytes_deterministic(self, tmp_path):
        params = make_params((8, 4), seed=6)
        state = init_optimizer(params)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, params, state)
        save_checkpoint(b, params, state)
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_files_rejected(self, tmp_path):
        params = make_params((8, 4), seed=7)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params)
        blob = path.read_bytes()
        truncated = tmp_path / "trunc.ckpt"
        truncated.write_bytes(blob[:-9])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(truncated)
        bad_magic = tmp_path / "magic.ckpt"
        bad_magic.write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(bad_magic)
        trailing = tmp_path / "trail.ckpt"
        trailing.write_bytes(blob + b"\x00" * 8)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(trailing)
