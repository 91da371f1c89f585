"""Tensor op tests: frozen hand values, contract errors, gradient checks."""

import numpy as np
import pytest

from gradcheck import assert_gradients_match

from diffmvr.errors import ContractError, DimensionError, NumericError
from diffmvr.numerics import (
    Rng,
    Tensor,
    concat,
    conv2d,
    matmul,
    narrow,
    softmax,
    upsample2x,
)


def t(data, grad=False, dtype=np.float32):
    return Tensor(np.asarray(data), requires_grad=grad, dtype=dtype)


class TestHandValues:
    def test_matmul_2x2_by_2x1(self):
        out = matmul(t([[1.0, 2.0], [3.0, 4.0]]), t([[5.0], [6.0]]))
        assert np.array_equal(out.data, [[17.0], [39.0]])

    def test_matmul_identity(self):
        b = np.array([[2.0, -1.0], [0.5, 3.0]])
        out = matmul(t(np.eye(2)), t(b))
        assert np.array_equal(out.data, b.astype(np.float32))

    def test_softmax_quarter_three_quarters(self):
        out = softmax(t([0.0, np.log(3.0)]))
        assert np.allclose(out.data, [0.25, 0.75], atol=1e-7)

    def test_softmax_rows_sum_to_one(self):
        x = Rng(1).normal((6, 9), dtype=np.float64)
        out = softmax(Tensor(x, dtype=np.float64), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (out.data > 0).all()

    def test_softmax_shift_invariance(self):
        x = Rng(2).normal((5,), dtype=np.float64)
        a = softmax(Tensor(x, dtype=np.float64)).data
        b = softmax(Tensor(x + 1000.0, dtype=np.float64)).data
        assert np.allclose(a, b, atol=1e-12)

    def test_conv_average_keeps_constant(self):
        # 3x3 averaging kernel with reflect same-padding reproduces a
        # constant image.
        x = t(np.full((1, 3, 5, 5), 0.7))
        w = t(np.full((2, 3, 3, 3), 1.0 / 27.0))
        y = conv2d(x, w, stride=1, pad=1, pad_mode="reflect")
        assert y.shape == (1, 2, 5, 5)
        assert np.allclose(y.data, 0.7, atol=1e-6)

    def test_conv_matches_direct_sliding_window(self):
        rng = Rng(3)
        x = rng.normal((2, 3, 8, 7), dtype=np.float64)
        w = rng.normal((4, 3, 3, 3), dtype=np.float64)
        b = rng.normal((4,), dtype=np.float64)
        got = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                     Tensor(b, dtype=np.float64), stride=2, pad=1,
                     pad_mode="zero").data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros_like(got)
        for n in range(2):
            for co in range(4):
                for i in range(got.shape[2]):
                    for j in range(got.shape[3]):
                        patch = xp[n, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                        ref[n, co, i, j] = (patch * w[co]).sum() + b[co]
        assert np.allclose(got, ref, atol=1e-12)

    def test_conv_reflect_pad_matches_numpy_pad(self):
        rng = Rng(4)
        x = rng.normal((1, 2, 6, 6), dtype=np.float64)
        w = rng.normal((2, 2, 3, 3), dtype=np.float64)
        got = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                     stride=1, pad=1, pad_mode="reflect").data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")
        ref = conv2d(Tensor(xp, dtype=np.float64), Tensor(w, dtype=np.float64),
                     stride=1, pad=0).data
        assert np.allclose(got, ref, atol=1e-12)

    def test_upsample2x_values(self):
        x = t([[[[1.0, 2.0], [3.0, 4.0]]]])
        y = upsample2x(x)
        assert np.array_equal(
            y.data[0, 0],
            [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]],
        )

    def test_concat_roundtrip(self):
        a, b = t(np.ones((2, 3))), t(np.zeros((2, 2)))
        out = concat([a, b], axis=1)
        assert out.shape == (2, 5)
        assert np.array_equal(out.data[:, :3], a.data)

    def test_narrow_values_and_bounds(self):
        x = t(np.arange(24.0).reshape(2, 3, 4))
        got = narrow(x, 1, 1, 2)
        assert np.array_equal(got.data, x.data[:, 1:3])
        with pytest.raises(DimensionError):
            narrow(x, 1, 2, 2)
        with pytest.raises(DimensionError):
            narrow(x, 3, 0, 1)

    def test_reductions_match_numpy(self):
        x = Rng(5).normal((3, 4, 5), dtype=np.float64)
        tt = Tensor(x, dtype=np.float64)
        assert np.allclose(tt.sum(axis=1).data, x.sum(axis=1))
        assert np.allclose(tt.mean(axis=(0, 2), keepdims=True).data,
                           x.mean(axis=(0, 2), keepdims=True))
        assert np.isclose(tt.mean().item(), x.mean())


class TestBackward:
    def test_sum_of_squares_gradient(self):
        x = t([1.0, -2.0, 3.0], grad=True)
        (x * x).sum().backward()
        assert np.allclose(x.grad, [2.0, -4.0, 6.0])

    def test_softmax_sum_gradient_is_zero(self):
        x = t([0.3, -1.2, 2.0, 0.0], grad=True)
        softmax(x).sum().backward()
        assert np.allclose(x.grad, 0.0, atol=1e-7)

    def test_repeated_backward_accumulates(self):
        x = t([1.0, 2.0], grad=True)
        loss = (x * x).sum()
        loss.backward()
        loss.backward()
        assert np.allclose(x.grad, [4.0, 8.0])

    def test_clear_grad(self):
        x = t([1.0], grad=True)
        (x * x).sum().backward()
        x.clear_grad()
        assert x.grad is None

    def test_broadcast_gradient_shapes(self):
        a = t(np.ones((3, 4)), grad=True)
        b = t(np.ones((4,)), grad=True)
        ((a + b) * 2.0).sum().backward()
        assert a.grad.shape == (3, 4) and b.grad.shape == (4,)
        assert np.allclose(b.grad, 6.0)

    def test_diamond_reuse_counts_both_paths(self):
        x = t([2.0], grad=True)
        y = x * x
        ((y + y)).sum().backward()
        assert np.allclose(x.grad, [8.0])

    def test_backward_requires_scalar(self):
        x = t([1.0, 2.0], grad=True)
        with pytest.raises(ContractError):
            (x * x).backward()

    def test_constant_results_build_no_tape(self):
        a, b = t(np.ones(3)), t(np.ones(3))
        out = a * b + a
        assert out._parents == () and not out.requires_grad

    def test_detach_blocks_gradient(self):
        x = t([3.0], grad=True)
        with pytest.raises(ContractError):
            (x.detach() * 2.0).sum().backward()


class TestErrors:
    def test_non_finite_op_output(self):
        with pytest.raises(NumericError):
            t([-1.0]).log()
        with pytest.raises(NumericError):
            t([1.0]) / t([0.0])

    def test_non_finite_construction(self):
        with pytest.raises(NumericError):
            Tensor(np.array([np.nan]))

    def test_dtype_mismatch(self):
        with pytest.raises(DimensionError):
            t([1.0]) + t([1.0], dtype=np.float64)
        with pytest.raises(DimensionError):
            matmul(t(np.ones((2, 2))), t(np.ones((2, 2)), dtype=np.float64))

    def test_matmul_shape_errors(self):
        with pytest.raises(DimensionError):
            matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))
        with pytest.raises(DimensionError):
            matmul(t(np.ones(3)), t(np.ones(3)))
        with pytest.raises(DimensionError):
            matmul(t(np.ones((2, 2, 3))), t(np.ones((3, 3, 4))))

    def test_conv_shape_errors(self):
        x, w = t(np.ones((1, 3, 8, 8))), t(np.ones((4, 3, 3, 3)))
        with pytest.raises(DimensionError):
            conv2d(x, t(np.ones((4, 3, 2, 2))))  # even kernel
        with pytest.raises(DimensionError):
            conv2d(x, t(np.ones((4, 2, 3, 3))))  # channel mismatch
        with pytest.raises(DimensionError):
            conv2d(t(np.ones((1, 3, 2, 2))), w, pad=2)  # reflect pad too large
        with pytest.raises(DimensionError):
            conv2d(t(np.ones((1, 3, 2, 2))), w)  # empty output
        with pytest.raises(DimensionError):
            conv2d(x, w, pad_mode="wrap")

    def test_unsupported_dtype(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones(3), dtype=np.int32)


def _conv_reflect_squared(xs):
    y = conv2d(xs[0], xs[1], xs[2], stride=1, pad=1)
    return (y * y).sum()


class TestGradients:
    """Central-difference checks, float32 graph at 1e-3 and float64 at 1e-6."""

    CASES = {}

    rng = Rng(909)
    _a23 = rng.normal((2, 3), dtype=np.float64)
    _b34 = rng.normal((3, 4), dtype=np.float64)
    _x = rng.normal((4, 5), dtype=np.float64)
    _pos = rng.uniform((4, 5)) + 0.5
    _img = rng.normal((2, 3, 6, 6), dtype=np.float64)
    _ker = rng.normal((4, 3, 3, 3), dtype=np.float64) * 0.4
    _bias = rng.normal((4,), dtype=np.float64)
    _bat = rng.normal((3, 2, 4), dtype=np.float64)
    _bat2 = rng.normal((3, 4, 5), dtype=np.float64)
    _w54 = rng.normal((5, 4), dtype=np.float64)

    w_out = {}

    CASES["add_broadcast"] = (lambda xs: ((xs[0] + xs[1]) * (xs[0] + xs[1])).sum(),
                              [_x, rng.normal((5,), dtype=np.float64)])
    CASES["sub_mul"] = (lambda xs: ((xs[0] - xs[1]) * xs[0]).sum(), [_x, _x * 0.3])
    CASES["div"] = (lambda xs: (xs[0] / (xs[1] * xs[1] + 2.0)).sum(), [_x, _x[:1]])
    CASES["exp"] = (lambda xs: (xs[0].exp() * 0.1).sum(), [_x * 0.5])
    CASES["log"] = (lambda xs: xs[0].log().sum(), [_pos])
    CASES["sqrt"] = (lambda xs: xs[0].sqrt().sum(), [_pos])
    CASES["sigmoid"] = (lambda xs: (xs[0].sigmoid() * xs[0]).sum(), [_x * 2])
    CASES["tanh"] = (lambda xs: (xs[0].tanh() * xs[0]).sum(), [_x])
    CASES["silu"] = (lambda xs: (xs[0].silu() * 0.7).sum(), [_x * 2])
    CASES["mean_axis"] = (lambda xs: (xs[0].mean(axis=1) * xs[0].sum(axis=1)).sum(), [_x])
    CASES["reshape_swap"] = (
        lambda xs: (xs[0].reshape(5, 4).swapaxes(0, 1) * xs[0]).sum(), [_x])
    CASES["matmul_22"] = (
        lambda xs: (matmul(xs[0], xs[1]) * matmul(xs[0], xs[1])).sum(), [_a23, _b34])
    CASES["matmul_33"] = (
        lambda xs: (matmul(xs[0], xs[1]) * 0.3).sum(), [_bat, _bat2])
    CASES["matmul_32"] = (
        lambda xs: (matmul(xs[0], xs[1]) * matmul(xs[0], xs[1])).sum(), [_bat2, _w54])
    CASES["softmax_last"] = (
        lambda xs: (softmax(xs[0], axis=-1) * Tensor(np.arange(5.0), dtype=xs[0].dtype)).sum(),
        [_x])
    CASES["softmax_axis0"] = (
        lambda xs: (softmax(xs[0], axis=0) * xs[0]).sum(), [_x])
    CASES["concat_axis1"] = (
        lambda xs: (concat([xs[0], xs[1]], axis=1) * 0.5).sum(),
        [_x, rng.normal((4, 2), dtype=np.float64)])
    CASES["narrow_axis1"] = (
        lambda xs: (narrow(xs[0], 1, 1, 3) * narrow(xs[0], 1, 0, 3)).sum(), [_x])
    CASES["upsample"] = (
        lambda xs: (upsample2x(xs[0]) * upsample2x(xs[0])).sum(), [_img])
    CASES["conv_plain"] = (
        lambda xs: (conv2d(xs[0], xs[1]) * 0.2).sum(), [_img, _ker])
    CASES["conv_reflect_s1"] = (_conv_reflect_squared, [_img, _ker, _bias])
    CASES["conv_reflect_s2"] = (
        lambda xs: (conv2d(xs[0], xs[1], xs[2], stride=2, pad=1) * 0.3).sum(),
        [_img, _ker, _bias])
    CASES["conv_zero_s2"] = (
        lambda xs: (conv2d(xs[0], xs[1], None, stride=2, pad=1, pad_mode="zero")
                    * 1.7).sum(),
        [_img, _ker])
    CASES["conv_unbatched"] = (
        lambda xs: (conv2d(xs[0], xs[1], stride=1, pad=1) * 0.6).sum(),
        [_img[0], _ker])

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_float32_vs_f64_differences(self, name):
        build, arrays = self.CASES[name]
        assert_gradients_match(build, arrays, dtype=np.float32, rtol=1e-3)

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_float64_strict(self, name):
        build, arrays = self.CASES[name]
        assert_gradients_match(build, arrays, dtype=np.float64, rtol=1e-6)
