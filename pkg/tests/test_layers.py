"""GRU cell, bidirectional sweep, and pooling tests."""

import math

import numpy as np
import pytest

from qan import autodiff as ad
from qan.autodiff import Matrix, backward, zero_gradients
from qan.errors import EmptyInputError, ShapeError
from qan.layers import GRUWeights, bigru, gru_cell, pool_max_mean


def constant_weights(d_in, d_h, value):
    w = GRUWeights.create(d_in, d_h, np.random.default_rng(0))
    for name in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"):
        getattr(w, name).data[...] = value
    return w


class TestGRUCell:
    def test_zero_weights_halve_previous_state(self):
        # z = sigmoid(0) = 0.5 and the candidate is tanh(0) = 0, so
        # h' = 0.5 * h_prev.
        w = constant_weights(2, 3, 0.0)
        h_prev = Matrix([[2.0, -4.0, 6.0]])
        out = gru_cell(Matrix([[1.0, 1.0]]), h_prev, w)
        np.testing.assert_allclose(out.data, [[1.0, -2.0, 3.0]], atol=1e-12)

    def test_zero_state_zero_weights_stays_zero(self):
        w = constant_weights(2, 3, 0.0)
        out = gru_cell(Matrix([[5.0, -1.0]]), Matrix.zeros(1, 3), w)
        np.testing.assert_allclose(out.data, np.zeros((1, 3)), atol=1e-12)

    def test_scalar_hand_evaluation(self):
        # All weights 0.1, x=[1], h_prev=[0]:
        #   z = sigmoid(0.1*1 + 0.1*0 + 0.1) = sigmoid(0.2)
        #   r = sigmoid(0.2)  (unused: r multiplies a zero state)
        #   c = tanh(0.1*1 + 0.1*(r*0) + 0.1) = tanh(0.2)
        #   h' = (1-z)*0 + z*c = sigmoid(0.2) * tanh(0.2)
        sig = 1.0 / (1.0 + math.exp(-0.2))
        expected = sig * math.tanh(0.2)
        w = constant_weights(1, 1, 0.1)
        out = gru_cell(Matrix([[1.0]]), Matrix([[0.0]]), w)
        assert abs(out.data[0, 0] - expected) < 1e-12

    def test_shape_mismatch(self):
        w = constant_weights(2, 3, 0.1)
        with pytest.raises(ShapeError):
            gru_cell(Matrix([[1.0, 2.0, 3.0]]), Matrix.zeros(1, 3), w)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        w = GRUWeights.create(3, 2, rng)
        x = Matrix(rng.normal(size=(1, 3)))
        h = Matrix(rng.normal(size=(1, 2)))
        params = {"x": x, "h": h, **w.named("gru")}

        def build():
            return ad.sum_all(ad.tanh(gru_cell(x, h, w)))

        loss = build()
        zero_gradients(params.values())
        backward(loss)
        numeric = ad.finite_difference_gradients(
            lambda: float(build().data[0, 0]), params)
        for name, p in params.items():
            assert ad.gradient_close(p.grad, numeric[name]), name


class TestBiGRU:
    def test_single_element_matches_two_cells_from_zero_state(self):
        rng = np.random.default_rng(1)
        wf = GRUWeights.create(3, 2, rng)
        wb = GRUWeights.create(3, 2, rng)
        values = Matrix(rng.normal(size=(1, 3)))
        out = bigru(values, None, wf, wb)
        fwd = gru_cell(ad.row(values, 0), Matrix.zeros(1, 2), wf)
        bwd = gru_cell(ad.row(values, 0), Matrix.zeros(1, 2), wb)
        np.testing.assert_allclose(out.data,
                                   np.concatenate([fwd.data, bwd.data], axis=1),
                                   atol=1e-12)

    def test_palindrome_with_shared_weights_is_symmetric(self):
        rng = np.random.default_rng(2)
        w = GRUWeights.create(3, 2, rng)
        row_a = rng.normal(size=3)
        row_b = rng.normal(size=3)
        values = Matrix(np.stack([row_a, row_b, row_a]))
        out = bigru(values, None, w, w).data
        d = 2
        for t in range(3):
            np.testing.assert_allclose(out[t, :d], out[2 - t, d:], atol=1e-12)

    def test_two_steps_match_unrolled_cells(self):
        rng = np.random.default_rng(3)
        wf = GRUWeights.create(3, 2, rng)
        wb = GRUWeights.create(3, 2, rng)
        values = Matrix(rng.normal(size=(2, 3)))
        out = bigru(values, None, wf, wb).data

        h0 = gru_cell(ad.row(values, 0), Matrix.zeros(1, 2), wf)
        h1 = gru_cell(ad.row(values, 1), h0, wf)
        g1 = gru_cell(ad.row(values, 1), Matrix.zeros(1, 2), wb)
        g0 = gru_cell(ad.row(values, 0), g1, wb)
        np.testing.assert_allclose(out[0], np.concatenate([h0.data[0], g0.data[0]]),
                                   atol=1e-12)
        np.testing.assert_allclose(out[1], np.concatenate([h1.data[0], g1.data[0]]),
                                   atol=1e-12)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(4)
        wf = GRUWeights.create(3, 2, rng)
        wb = GRUWeights.create(3, 2, rng)
        with pytest.raises(EmptyInputError):
            bigru(Matrix(np.zeros((0, 3))), None, wf, wb)

    def test_masked_positions_do_not_update_state(self):
        rng = np.random.default_rng(6)
        wf = GRUWeights.create(3, 2, rng)
        wb = GRUWeights.create(3, 2, rng)
        real = rng.normal(size=(2, 3))
        padded = np.vstack([real, rng.normal(size=(2, 3))])  # junk pad rows
        mask = np.array([True, True, False, False])
        out_real = bigru(Matrix(real), None, wf, wb).data
        out_padded = bigru(Matrix(padded), mask, wf, wb).data
        np.testing.assert_allclose(out_padded[:2], out_real, atol=1e-12)
        # Carried-through states: the pad rows repeat the last real state.
        np.testing.assert_allclose(out_padded[2, :2], out_padded[1, :2])


class TestPoolMaxMean:
    def test_single_row_doubles(self):
        v = Matrix([[1.5, -2.0, 0.25]])
        out = pool_max_mean(v)
        np.testing.assert_allclose(out.data, [[1.5, -2.0, 0.25, 1.5, -2.0, 0.25]])

    def test_hand_case(self):
        m = Matrix([[1.0, 5.0], [3.0, 3.0]])
        out = pool_max_mean(m)
        np.testing.assert_allclose(out.data, [[3.0, 5.0, 2.0, 4.0]])

    def test_constant_matrix(self):
        m = Matrix(np.full((4, 3), 0.7))
        out = pool_max_mean(m)
        np.testing.assert_allclose(out.data, [[0.7] * 6])

    def test_all_masked_rejected(self):
        with pytest.raises(EmptyInputError):
            pool_max_mean(Matrix(np.ones((2, 2))), np.array([False, False]))

    def test_mask_excludes_rows(self):
        m = Matrix([[1.0, 5.0], [100.0, 100.0], [3.0, 3.0]])
        mask = np.array([True, False, True])
        out = pool_max_mean(m, mask)
        np.testing.assert_allclose(out.data, [[3.0, 5.0, 2.0, 4.0]])

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        m = Matrix(rng.normal(size=(4, 3)))
        mask = np.array([True, True, False, True])
        params = {"m": m}

        def build():
            return ad.sum_all(ad.tanh(pool_max_mean(m, mask)))

        loss = build()
        zero_gradients(params.values())
        backward(loss)
        numeric = ad.finite_difference_gradients(
            lambda: float(build().data[0, 0]), params)
        assert ad.gradient_close(m.grad, numeric["m"])
