from __future__ import annotations

import numpy as np
import pytest

from metalstm.errors import ValidationError
from metalstm.lstm import (
    AdamState,
    CellState,
    ModelParams,
    adam_step,
    backward,
    cell_step,
    forward,
    init_params,
    loss_and_grads,
    mse_loss,
    params_checksum,
    sgd_step,
)
from oracles import fd_gradient, scalar_forward


def random_params(rng, hidden=4, d_in=3, d_out=2, scale=0.6):
    base = ModelParams.zeros(hidden, d_in, d_out)
    return base.map(lambda a: rng.normal(0.0, scale, size=a.shape))


class TestInit:
    def test_same_seed_identical(self):
        a = init_params(8, 6, 3, np.random.default_rng(7))
        b = init_params(8, 6, 3, np.random.default_rng(7))
        assert params_checksum(a) == params_checksum(b)

    def test_shapes(self):
        p = init_params(32, 30, 10, np.random.default_rng(0))
        assert p.w_f.shape == (32, 62)
        assert p.w_y.shape == (10, 32)
        assert p.hidden_size == 32 and p.input_size == 30 and p.output_size == 10

    def test_forget_bias_one(self):
        p = init_params(5, 2, 1, np.random.default_rng(0))
        assert np.all(p.b_f == 1.0)
        assert np.all(p.b_i == 0.0) and np.all(p.b_o == 0.0) and np.all(p.b_y == 0.0)

    def test_xavier_bounds(self):
        p = init_params(16, 8, 4, np.random.default_rng(3))
        s = np.sqrt(6.0 / (16 + 24))
        assert np.all(np.abs(p.w_f) <= s)

    def test_bad_dims(self):
        with pytest.raises(ValidationError):
            init_params(0, 3, 2, np.random.default_rng(0))


class TestCellStep:
    def test_zero_params_give_half_gates(self):
        p = ModelParams.zeros(3, 2, 1)
        state = CellState.initial(1, 3)
        out = cell_step(p, np.array([0.4, -1.2]), state)
        assert np.allclose(out.forget_gate, 0.5)
        assert np.allclose(out.input_gate, 0.5)
        assert np.allclose(out.output_gate, 0.5)
        assert np.allclose(out.candidate, 0.0)
        assert np.allclose(out.c, 0.0) and np.allclose(out.h, 0.0)

    def test_saturated_forget_gate_preserves_cell(self):
        rng = np.random.default_rng(11)
        p = random_params(rng, hidden=4, d_in=2, d_out=1)
        p = ModelParams(**{**{f: getattr(p, f) for f in p.__dataclass_fields__},
                           "w_f": np.zeros_like(p.w_f), "b_f": np.full(4, 20.0)})
        prev = CellState.initial(1, 4)
        prev = cell_step(p, rng.normal(size=2), prev)
        out = cell_step(p, rng.normal(size=2), prev)
        assert np.all(np.abs(out.forget_gate - 1.0) < 1e-8)
        expected_c = prev.c + out.input_gate * out.candidate
        assert np.allclose(out.c, expected_c, atol=1e-7)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(23)
        p = random_params(rng, hidden=3, d_in=2, d_out=2)
        x = rng.normal(size=2)
        got = cell_step(p, x, CellState.initial(1, 3))
        want = scalar_forward(p, [x])  # oracle runs the head too; reuse gates via h
        # compare hidden state by re-deriving the head from the oracle's path
        pred, _ = forward(p, x[np.newaxis, :])
        assert np.allclose(pred, want, atol=1e-12)
        assert got.h.shape == (1, 3)

    def test_gate_bounds_random(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            p = random_params(rng, hidden=5, d_in=4, d_out=2, scale=2.5)
            state = CellState.initial(3, 5)
            for _ in range(4):
                state = cell_step(p, rng.normal(size=(3, 4)) * 3, state)
                for g in (state.forget_gate, state.input_gate, state.output_gate):
                    assert np.all((g >= 0.0) & (g <= 1.0))
                assert np.all(np.abs(state.candidate) <= 1.0)

    def test_nonfinite_input_rejected(self):
        p = ModelParams.zeros(2, 2, 1)
        with pytest.raises(ValidationError):
            cell_step(p, np.array([np.nan, 0.0]), CellState.initial(1, 2))


class TestForward:
    def test_zero_params_zero_prediction(self):
        p = ModelParams.zeros(4, 3, 2)
        pred, _ = forward(p, np.ones((6, 3)))
        assert pred.shape == (2,)
        assert np.all(pred == 0.0)

    def test_single_step_equals_cell_plus_head(self):
        rng = np.random.default_rng(9)
        p = random_params(rng)
        x = rng.normal(size=(1, 3))
        pred, _ = forward(p, x)
        state = cell_step(p, x[0], CellState.initial(1, 4))
        manual = np.tanh(state.h @ p.w_y.T + p.b_y)[0]
        assert np.allclose(pred, manual, atol=1e-15)

    def test_matches_scalar_oracle_end_to_end(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            p = random_params(rng, hidden=4, d_in=3, d_out=2)
            seq = rng.normal(size=(5, 3))
            pred, _ = forward(p, seq)
            want = scalar_forward(p, seq)
            assert np.allclose(pred, want, atol=1e-12)

    def test_batched_forward_matches_per_sample(self):
        rng = np.random.default_rng(2)
        p = random_params(rng)
        batch = rng.normal(size=(6, 4, 3))
        preds, _ = forward(p, batch)
        for k in range(6):
            single, _ = forward(p, batch[k])
            assert np.allclose(preds[k], single, atol=1e-14)

    def test_empty_sequence_rejected(self):
        p = ModelParams.zeros(2, 2, 1)
        with pytest.raises(ValidationError):
            forward(p, np.zeros((0, 2)))


class TestLoss:
    def test_zero_when_equal(self):
        assert mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_direct_value(self):
        assert mse_loss(np.array([0.0, 0.0]), np.array([1.0, 3.0])) == pytest.approx(5.0)

    def test_batch_is_mean_of_samples(self):
        pred = np.array([[0.0, 0.0], [1.0, 1.0]])
        label = np.array([[1.0, 3.0], [1.0, 1.0]])
        per_sample = [mse_loss(pred[k], label[k]) for k in range(2)]
        assert mse_loss(pred, label) == pytest.approx(np.mean(per_sample))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            mse_loss(np.zeros(3), np.zeros(4))


class TestBackward:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(77)
        p = random_params(rng, hidden=4, d_in=3, d_out=2)
        seq = rng.normal(size=(2, 3, 3))
        label = rng.normal(size=(2, 2)) * 0.5
        _, grads = loss_and_grads(p, seq, label)
        numeric = fd_gradient(lambda q: loss_and_grads(q, seq, label)[0], p)
        analytic = grads.to_vector()
        denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-4)
        assert np.max(np.abs(numeric - analytic) / denom) < 1e-4

    def test_zero_error_zero_grads(self):
        rng = np.random.default_rng(13)
        p = random_params(rng)
        seq = rng.normal(size=(4, 3))
        pred, tape = forward(p, seq)
        grads = backward(tape, pred)
        assert np.all(grads.to_vector() == 0.0)

    def test_batch_gradient_is_mean_of_per_sample(self):
        rng = np.random.default_rng(29)
        p = random_params(rng)
        seqs = rng.normal(size=(5, 4, 3))
        labels = rng.normal(size=(5, 2)) * 0.3
        _, batch_grads = loss_and_grads(p, seqs, labels)
        singles = [loss_and_grads(p, seqs[k], labels[k])[1].to_vector() for k in range(5)]
        assert np.allclose(batch_grads.to_vector(), np.mean(singles, axis=0), atol=1e-14)

    def test_label_shape_mismatch(self):
        p = ModelParams.zeros(2, 2, 2)
        _, tape = forward(p, np.zeros((3, 2)))
        with pytest.raises(ValidationError):
            backward(tape, np.zeros(3))


class TestOptimizers:
    def test_sgd_zero_grads_identity(self):
        rng = np.random.default_rng(1)
        p = random_params(rng)
        g = p.map(np.zeros_like)
        out = sgd_step(p, g, 0.01)
        assert params_checksum(out) == params_checksum(p)

    def test_sgd_unit_grads(self):
        p = ModelParams.zeros(2, 2, 1)
        g = p.map(np.ones_like)
        out = sgd_step(p, g, 0.001)
        assert np.allclose(out.w_f, -0.001)
        assert np.allclose(out.b_y, -0.001)

    def test_sgd_steps_compose_linearly(self):
        rng = np.random.default_rng(3)
        p = random_params(rng)
        g1 = p.map(lambda a: np.full_like(a, 0.5))
        g2 = p.map(lambda a: np.full_like(a, -0.25))
        two = sgd_step(sgd_step(p, g1, 0.1), g2, 0.1)
        summed = sgd_step(p, g1.zip_map(g2, np.add), 0.1)
        assert np.allclose(two.to_vector(), summed.to_vector(), atol=1e-15)

    def test_adam_first_step_magnitude(self):
        rng = np.random.default_rng(8)
        p = random_params(rng)
        g = p.map(lambda a: np.full_like(a, 0.37))
        out, state = adam_step(p, g, AdamState.fresh(p), lr=0.001)
        delta = np.abs(out.to_vector() - p.to_vector())
        assert np.all(delta <= 0.001 + 1e-12)
        assert np.all(delta >= 0.001 * (1.0 - 1e-6))
        assert state.step == 1

    def test_adam_zero_grads_forever(self):
        rng = np.random.default_rng(8)
        p = random_params(rng)
        g = p.map(np.zeros_like)
        state = AdamState.fresh(p)
        q = p
        for _ in range(5):
            q, state = adam_step(q, g, state, lr=0.01)
        assert params_checksum(q) == params_checksum(p)

    def test_adam_default_hyperparams(self):
        import inspect

        sig = inspect.signature(adam_step)
        assert sig.parameters["beta1"].default == 0.9
        assert sig.parameters["beta2"].default == 0.999
        assert sig.parameters["eps"].default == 1e-8


class TestTraining:
    def test_loss_halves_on_tiny_regression(self):
        rng = np.random.default_rng(55)
        p = init_params(6, 2, 1, rng)
        x = rng.uniform(-1, 1, size=(12, 3, 2))
        y = 0.5 + 0.3 * np.tanh(x[:, -1, :1] + 0.3 * x[:, 0, 1:])
        first = loss_and_grads(p, x, y)[0]
        for _ in range(100):
            _, g = loss_and_grads(p, x, y)
            p = sgd_step(p, g, 0.01)
        final = loss_and_grads(p, x, y)[0]
        assert final < 0.5 * first

    def test_forward_backward_bit_reproducible(self):
        rng = np.random.default_rng(4)
        p = random_params(rng)
        seq = rng.normal(size=(3, 4, 3))
        label = rng.normal(size=(3, 2))
        l1, g1 = loss_and_grads(p, seq, label)
        l2, g2 = loss_and_grads(p, seq, label)
        assert l1 == l2
        assert params_checksum(g1) == params_checksum(g2)
