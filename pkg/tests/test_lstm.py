"""Tests for the LSTM cell, sequence unroll and bidirectional encoder."""

import numpy as np
import pytest

from comatching.errors import EmptySequenceError, ShapeError
from comatching.lstm import BiLstmWeights, LstmWeights, bilstm_encode, lstm_cell, lstm_run
from comatching.rng import substream
from comatching.tensor import Tape, Tensor, grad_check, sum_all


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def reference_cell(x, h, c, w_x, w_h, b):
    """Independent straight-line implementation of one LSTM step."""
    hid = b.shape[0] // 4
    z = w_x @ x + w_h @ h + b
    i = _sigmoid(z[:hid])
    f = _sigmoid(z[hid : 2 * hid])
    g = np.tanh(z[2 * hid : 3 * hid])
    o = _sigmoid(z[3 * hid :])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


def make_weights(seed, d, hid, scale=0.7):
    rng = substream(seed, "test")
    return LstmWeights(
        Tensor(rng.uniform(-scale, scale, (4 * hid, d)), requires_grad=True),
        Tensor(rng.uniform(-scale, scale, (4 * hid, hid)), requires_grad=True),
        Tensor(rng.uniform(-scale, scale, (4 * hid, 1)), requires_grad=True),
    )


class TestLstmCell:
    def test_zero_everything_gives_zero_state(self):
        # all gates sit at 0.5 but the candidate is tanh(0) = 0
        w = LstmWeights(
            Tensor(np.zeros((8, 3)), requires_grad=True),
            Tensor(np.zeros((8, 2)), requires_grad=True),
            Tensor(np.zeros((8, 1)), requires_grad=True),
        )
        h, c = lstm_cell(Tensor(np.zeros((3, 1))), Tensor(np.zeros((2, 1))),
                         Tensor(np.zeros((2, 1))), w)
        np.testing.assert_array_equal(h.data, np.zeros((2, 1)))
        np.testing.assert_array_equal(c.data, np.zeros((2, 1)))

    def test_matches_straight_line_oracle(self):
        rng = substream(31, "test")
        w = make_weights(31, 3, 2)
        x = Tensor(rng.uniform(-1, 1, (3, 1)))
        h0 = Tensor(rng.uniform(-1, 1, (2, 1)))
        c0 = Tensor(rng.uniform(-1, 1, (2, 1)))
        h, c = lstm_cell(x, h0, c0, w)
        h_ref, c_ref = reference_cell(x.data, h0.data, c0.data,
                                      w.w_x.data, w.w_h.data, w.b.data)
        np.testing.assert_allclose(h.data, h_ref, atol=1e-12)
        np.testing.assert_allclose(c.data, c_ref, atol=1e-12)

    def test_backward_through_five_steps(self):
        rng = substream(32, "test")
        w = make_weights(32, 3, 2)
        xs = [Tensor(rng.uniform(-1, 1, (3, 1)), requires_grad=True) for _ in range(5)]

        def loss():
            h = Tensor(np.zeros((2, 1)))
            c = Tensor(np.zeros((2, 1)))
            for x in xs:
                h, c = lstm_cell(x, h, c, w)
            return sum_all(h)

        err = grad_check(loss, [w.w_x, w.w_h, w.b, *xs])
        assert err < 1e-5

    def test_shape_mismatch_rejected(self):
        w = make_weights(33, 3, 2)
        with pytest.raises(ShapeError):
            lstm_cell(Tensor(np.zeros((4, 1))), Tensor(np.zeros((2, 1))),
                      Tensor(np.zeros((2, 1))), w)


class TestLstmRun:
    def test_matches_stepwise_cell(self):
        rng = substream(34, "test")
        w = make_weights(34, 3, 2)
        x = Tensor(rng.uniform(-1, 1, (3, 6)))
        run = lstm_run(x, w)
        h = Tensor(np.zeros((2, 1)))
        c = Tensor(np.zeros((2, 1)))
        for t in range(6):
            h, c = lstm_cell(Tensor(x.data[:, t : t + 1]), h, c, w)
            np.testing.assert_allclose(run.data[:, t : t + 1], h.data, atol=1e-12)

    def test_reverse_matches_stepwise_cell(self):
        rng = substream(35, "test")
        w = make_weights(35, 3, 2)
        x = Tensor(rng.uniform(-1, 1, (3, 4)))
        run = lstm_run(x, w, reverse=True)
        h = Tensor(np.zeros((2, 1)))
        c = Tensor(np.zeros((2, 1)))
        for t in range(3, -1, -1):
            h, c = lstm_cell(Tensor(x.data[:, t : t + 1]), h, c, w)
            np.testing.assert_allclose(run.data[:, t : t + 1], h.data, atol=1e-12)

    def test_backward_matches_finite_differences(self):
        rng = substream(36, "test")
        w = make_weights(36, 3, 2)
        x = Tensor(rng.uniform(-1, 1, (3, 5)), requires_grad=True)
        for reverse in (False, True):
            err = grad_check(
                lambda: sum_all(lstm_run(x, w, reverse=reverse)),
                [x, w.w_x, w.w_h, w.b],
            )
            assert err < 1e-5

    def test_empty_sequence_rejected(self):
        w = make_weights(37, 3, 2)
        with pytest.raises(EmptySequenceError):
            lstm_run(Tensor(np.zeros((3, 0))), w)


class TestBilstmEncode:
    def test_single_step_output_shape(self):
        enc = BiLstmWeights.create(3, 4, substream(38, "test"))
        out = bilstm_encode(Tensor(np.ones((3, 1))), enc.fwd, enc.bwd)
        assert out.shape == (4, 1)

    def test_output_shape_any_length(self):
        enc = BiLstmWeights.create(3, 4, substream(39, "test"))
        for T in (1, 2, 7):
            out = bilstm_encode(Tensor(np.ones((3, T))), enc.fwd, enc.bwd)
            assert out.shape == (4, T)

    def test_reversal_swaps_direction_halves(self):
        """With identical direction weights, encoding the reversed sequence
        mirrors the columns and swaps the forward/backward halves."""
        rng = substream(40, "test")
        w = make_weights(40, 3, 2)
        x = rng.uniform(-1, 1, (3, 5))
        fwd_view = bilstm_encode(Tensor(x), w, w).data
        rev_view = bilstm_encode(Tensor(x[:, ::-1]), w, w).data
        np.testing.assert_array_equal(rev_view[:2], fwd_view[2:, ::-1])
        np.testing.assert_array_equal(rev_view[2:], fwd_view[:2, ::-1])

    def test_gradient_over_full_sequence(self):
        rng = substream(41, "test")
        enc = BiLstmWeights.create(3, 4, rng, weight_scale=0.7)
        x = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
        params = [x] + [t for _, t in enc.named("enc")]
        err = grad_check(lambda: sum_all(bilstm_encode(x, enc.fwd, enc.bwd)), params)
        assert err < 1e-5

    def test_empty_sequence_rejected(self):
        enc = BiLstmWeights.create(3, 4, substream(42, "test"))
        with pytest.raises(EmptySequenceError):
            bilstm_encode(Tensor(np.zeros((3, 0))), enc.fwd, enc.bwd)


class TestWeightInit:
    def test_forget_bias_is_one(self):
        w = LstmWeights.create(3, 4, substream(43, "test"))
        np.testing.assert_array_equal(w.b.data[4:8], np.ones((4, 1)))
        np.testing.assert_array_equal(w.b.data[:4], np.zeros((4, 1)))
        np.testing.assert_array_equal(w.b.data[8:], np.zeros((8, 1)))

    def test_odd_output_size_rejected(self):
        from comatching.errors import ConfigError

        with pytest.raises(ConfigError):
            BiLstmWeights.create(3, 5, substream(44, "test"))
