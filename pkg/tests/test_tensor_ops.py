"""Forward-value tests for the tensor ops: hand cases plus naive oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segnetr.autodiff import (
    Tensor,
    backward,
    bilinear_upsample2x,
    concat,
    conv2d,
    cross_entropy,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean,
    relu,
    reshape,
    sigmoid,
    softmax,
    transpose,
)
from segnetr.autodiff import batch_norm
from segnetr.errors import ShapeError, ValidationError

from .oracles import (
    bilinear2x_naive,
    conv2d_naive,
    gelu_tanh_reference,
    matmul_naive,
)


def t64(arr):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


class TestRearrange:
    def test_reshape_preserves_row_major_values(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        y = reshape(x, (3, 2))
        assert y.shape == (3, 2)
        np.testing.assert_array_equal(y.data.ravel(), x.data.ravel())

    def test_permute_then_inverse_is_identity(self):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4, 5)))
        y = transpose(transpose(x, (2, 0, 1)), (1, 2, 0))
        np.testing.assert_array_equal(y.data, x.data)

    def test_concat_rows_in_argument_order(self):
        a = Tensor(np.full((1, 4), 1.0))
        b = Tensor(np.full((1, 4), 2.0))
        y = concat([a, b], axis=0)
        assert y.shape == (2, 4)
        np.testing.assert_array_equal(y.data[0], 1.0)
        np.testing.assert_array_equal(y.data[1], 2.0)

    def test_bad_reshape_raises(self):
        with pytest.raises(ShapeError):
            reshape(Tensor(np.zeros((2, 3))), (4, 2))


class TestMatmulLinear:
    def test_matmul_identity(self):
        a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        y = matmul(a, Tensor(np.eye(2)))
        np.testing.assert_array_equal(y.data, a.data)

    def test_matmul_against_triple_loop(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal((5, 2))
        got = matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, matmul_naive(a, b), rtol=1e-12)

    def test_linear_identity(self):
        x = Tensor(np.array([[3.0, -7.0]]))
        y = linear(x, Tensor(np.eye(2)), Tensor(np.zeros(2)))
        np.testing.assert_array_equal(y.data, x.data)

    def test_linear_hand_case(self):
        x = Tensor(np.array([1.0, 2.0]))
        w = Tensor(np.array([[1.0, 1.0], [1.0, -1.0]]))
        y = linear(x, w, Tensor(np.zeros(2)))
        np.testing.assert_allclose(y.data, [3.0, -1.0])

    def test_linear_matches_matmul_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((4, 6))
        w = rng.standard_normal((3, 6))
        b = rng.standard_normal(3)
        got = linear(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, matmul_naive(x, w.T) + b, rtol=1e-6)

    def test_linear_width_mismatch(self):
        with pytest.raises(ShapeError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestSoftmax:
    def test_uniform_input(self):
        y = softmax(Tensor(np.zeros(4)), axis=-1)
        np.testing.assert_allclose(y.data, 0.25)

    def test_large_inputs_do_not_overflow(self):
        y = softmax(Tensor(np.array([1000.0, 1000.0])), axis=-1)
        assert np.all(np.isfinite(y.data))
        np.testing.assert_allclose(y.data, [0.5, 0.5])

    def test_closed_form_quarter(self):
        y = softmax(t64([0.0, math.log(3.0)]), axis=-1)
        np.testing.assert_allclose(y.data, [0.25, 0.75], rtol=1e-12)

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=9))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, row):
        y = softmax(Tensor(np.asarray(row, dtype=np.float32)), axis=-1)
        assert abs(float(y.data.sum()) - 1.0) <= 1e-6
        assert np.all(y.data > 0) and np.all(y.data < 1.0 + 1e-6)


class TestConv:
    def test_identity_1x1(self):
        x = Tensor(np.random.default_rng(3).standard_normal((1, 2, 4, 4)))
        w = Tensor(np.eye(2).reshape(2, 2, 1, 1))
        y = conv2d(x, w, Tensor(np.zeros(2)))
        np.testing.assert_allclose(y.data, x.data, rtol=1e-6)

    def test_depthwise_box_sum(self):
        x = Tensor(np.ones((1, 1, 5, 5)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        y = conv2d(x, w, stride=1, padding=1, groups=1).data[0, 0]
        assert y[2, 2] == 9.0
        assert y[0, 0] == 4.0 and y[0, 4] == 4.0 and y[4, 0] == 4.0 and y[4, 4] == 4.0

    def test_random_against_six_loop_oracle(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 1, 4, 4))
        w = rng.standard_normal((1, 1, 3, 3))
        got = conv2d(Tensor(x), Tensor(w), padding=1).data
        np.testing.assert_allclose(got, conv2d_naive(x, w, padding=1), atol=1e-6)

    def test_strided_grouped_against_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 4, 6, 6))
        w = rng.standard_normal((6, 2, 3, 3))
        b = rng.standard_normal(6)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1, groups=2).data
        want = conv2d_naive(x, w, b, stride=2, padding=1, groups=2)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_group_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((2, 2, 1, 1))))


class TestMeanNorms:
    def test_mean_hand_cases(self):
        assert mean(Tensor(np.array([2.0, 4.0]))).data == 3.0
        x = Tensor(np.random.default_rng(6).standard_normal((3, 1, 2)))
        np.testing.assert_array_equal(mean(x, axis=1).data, x.data[:, 0, :])

    def test_mean_matches_direct_sum(self):
        arr = np.random.default_rng(7).standard_normal((4, 5))
        got = mean(Tensor(arr), axis=0).data
        np.testing.assert_allclose(got, arr.sum(axis=0) / 4.0, rtol=1e-6)

    def test_layer_norm_constant_input_is_zero_pre_affine(self):
        x = Tensor(np.full((2, 6), 3.5))
        y = layer_norm(x, Tensor(np.ones(6)), Tensor(np.zeros(6)))
        np.testing.assert_allclose(y.data, 0.0, atol=1e-5)

    def test_layer_norm_standardized_input_fixed_point(self):
        y = layer_norm(t64([-1.0, 1.0]), t64(np.ones(2)), t64(np.zeros(2)))
        np.testing.assert_allclose(y.data, [-1.0, 1.0], atol=1e-2)

    def test_layer_norm_matches_two_pass_oracle(self):
        arr = np.random.default_rng(8).standard_normal((3, 7))
        g = np.random.default_rng(9).standard_normal(7)
        b = np.random.default_rng(10).standard_normal(7)
        got = layer_norm(Tensor(arr), Tensor(g), Tensor(b)).data
        mu = arr.mean(axis=-1, keepdims=True)
        var = ((arr - mu) ** 2).mean(axis=-1, keepdims=True)
        want = (arr - mu) / np.sqrt(var + 1e-5) * g + b
        np.testing.assert_allclose(got, want, rtol=1e-5)

    def test_batch_norm_matches_two_pass_oracle(self):
        arr = np.random.default_rng(11).standard_normal((4, 3, 2, 2))
        g = np.ones(3)
        b = np.zeros(3)
        rm = np.zeros(3)
        rv = np.ones(3)
        got = batch_norm(Tensor(arr), Tensor(g), Tensor(b), rm, rv, training=True).data
        mu = arr.mean(axis=(0, 2, 3), keepdims=True)
        var = ((arr - mu) ** 2).mean(axis=(0, 2, 3), keepdims=True)
        np.testing.assert_allclose(got, (arr - mu) / np.sqrt(var + 1e-5), rtol=1e-4, atol=1e-5)

    def test_batch_norm_singleton_statistics_rejected(self):
        x = Tensor(np.zeros((1, 3, 1, 1)))
        with pytest.raises(ValidationError):
            batch_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), np.zeros(3), np.ones(3), training=True)


class TestActivations:
    def test_sigmoid_zero(self):
        assert sigmoid(Tensor(np.array(0.0))).data == 0.5

    def test_relu_negative(self):
        assert relu(Tensor(np.array(-3.0))).data == 0.0

    def test_gelu_matches_high_precision_reference(self):
        got = float(gelu(t64([1.0])).data[0])
        assert abs(got - gelu_tanh_reference(1.0)) < 1e-4

    def test_gelu_grid_against_reference(self):
        xs = np.linspace(-4, 4, 33)
        got = gelu(t64(xs)).data
        want = np.array([gelu_tanh_reference(v) for v in xs])
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestBilinear:
    def test_constant_input_constant_output(self):
        y = bilinear_upsample2x(Tensor(np.full((1, 2, 3, 3), 7.0)))
        assert y.shape == (1, 2, 6, 6)
        np.testing.assert_allclose(y.data, 7.0, rtol=1e-6)

    def test_one_by_one_input(self):
        y = bilinear_upsample2x(Tensor(np.full((1, 1, 1, 1), 2.5)))
        assert y.shape == (1, 1, 2, 2)
        np.testing.assert_allclose(y.data, 2.5)

    def test_ramp_matches_hand_interpolation(self):
        ramp = np.array([[0.0, 1.0], [2.0, 3.0]])
        got = bilinear_upsample2x(Tensor(ramp.reshape(1, 1, 2, 2))).data[0, 0]
        np.testing.assert_allclose(got, bilinear2x_naive(ramp), atol=1e-6)

    def test_random_matches_per_pixel_oracle(self):
        arr = np.random.default_rng(12).standard_normal((3, 5))
        got = bilinear_upsample2x(Tensor(arr.reshape(1, 1, 3, 5))).data[0, 0]
        np.testing.assert_allclose(got, bilinear2x_naive(arr), atol=1e-6)


class TestCrossEntropy:
    def test_uniform_logits_give_ln2(self):
        logits = Tensor(np.zeros((1, 2, 2, 2)))
        loss = cross_entropy(logits, np.zeros((1, 2, 2), dtype=np.int64))
        np.testing.assert_allclose(loss.data, math.log(2.0), rtol=1e-6)

    def test_confident_logits_beat_uniform(self):
        logits = np.zeros((1, 2, 2, 2), dtype=np.float32)
        logits[:, 1] = 3.0
        loss = cross_entropy(Tensor(logits), np.ones((1, 2, 2), dtype=np.int64))
        assert float(loss.data) < math.log(2.0)

    def test_random_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(13)
        logits = rng.standard_normal((1, 3, 2, 2))
        labels = rng.integers(0, 3, size=(1, 2, 2))
        loss = float(cross_entropy(t64(logits), labels).data)
        acc = 0.0
        for i in range(2):
            for j in range(2):
                row = logits[0, :, i, j]
                acc -= math.log(math.exp(row[labels[0, i, j]] - row.max()) / np.exp(row - row.max()).sum())
        np.testing.assert_allclose(loss, acc / 4.0, rtol=1e-9)

    def test_out_of_range_label_rejected(self):
        with pytest.raises(ValidationError):
            cross_entropy(Tensor(np.zeros((1, 2, 1, 1))), np.full((1, 1, 1), 5, dtype=np.int64))


class TestDeterminism:
    def test_bitwise_repeatability(self):
        def run():
            rng = np.random.default_rng(14)
            x = Tensor(rng.standard_normal((2, 3, 4, 4)).astype(np.float32), requires_grad=True)
            w = Tensor(rng.standard_normal((3, 3, 3, 3)).astype(np.float32), requires_grad=True)
            y = gelu(conv2d(x, w, padding=1))
            loss = mean(y * y)
            backward(loss)
            return y.data.copy(), x.grad.copy(), w.grad.copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)
