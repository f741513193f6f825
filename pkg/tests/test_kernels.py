"""Kernel tests: fast conv/pool paths against the in-tree loop oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeprink.errors import ShapeError
from deeprink.kernels import (
    conv3d,
    conv3d_batch,
    conv3d_grad,
    conv_output_shape,
    maxpool3d,
    maxpool3d_batch,
    maxpool3d_grad,
    naive_conv3d,
    naive_maxpool3d,
)


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at every element of x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        g.reshape(-1)[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.max(np.abs(a - b) / denom)


class TestConvForward:
    def test_valid_padding_shape(self):
        x = np.zeros((1, 15, 32, 32))
        k = np.zeros((8, 1, 3, 3, 3))
        out = conv3d(x, k, np.zeros(8), (1, 1, 1))
        assert out.shape == (8, 13, 30, 30)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 4, 5, 6))
        k = np.ones((1, 1, 1, 1, 1))
        out = conv3d(x, k, np.zeros(1), (1, 1, 1))
        np.testing.assert_array_equal(out, x)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 4, 4, 4))
        k = rng.normal(size=(3, 2, 2, 2, 2))
        b = rng.normal(size=3)
        fast = conv3d(x, k, b, (1, 1, 1))
        ref = naive_conv3d(x, k, b, (1, 1, 1))
        assert np.max(np.abs(fast - ref)) < 1e-12

    def test_matches_naive_on_random_shapes(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            ci = int(rng.integers(1, 4))
            co = int(rng.integers(1, 4))
            dims = rng.integers(2, 7, size=3)
            kdims = [int(rng.integers(1, d + 1)) for d in dims]
            stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
            x = rng.normal(size=(ci, *dims))
            k = rng.normal(size=(co, ci, *kdims))
            b = rng.normal(size=co)
            fast = conv3d(x, k, b, stride)
            ref = naive_conv3d(x, k, b, stride)
            assert fast.shape == ref.shape
            assert np.max(np.abs(fast - ref)) < 1e-12

    def test_linearity_in_input(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 5, 5, 5))
        y = rng.normal(size=(2, 5, 5, 5))
        k = rng.normal(size=(3, 2, 3, 3, 3))
        zero_b = np.zeros(3)
        lhs = conv3d(2.5 * x - 1.5 * y, k, zero_b)
        rhs = 2.5 * conv3d(x, k, zero_b) - 1.5 * conv3d(y, k, zero_b)
        assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_channel_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv3d(np.zeros((2, 4, 4, 4)), np.zeros((1, 3, 2, 2, 2)), np.zeros(1))

    def test_kernel_too_large_raises(self):
        with pytest.raises(ShapeError):
            conv3d(np.zeros((1, 2, 4, 4)), np.zeros((1, 1, 3, 2, 2)), np.zeros(1))

    def test_batch_agrees_with_per_sample(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 2, 4, 5, 6))
        k = rng.normal(size=(3, 2, 2, 2, 2))
        b = rng.normal(size=3)
        batched = conv3d_batch(x, k, b, (1, 2, 1))
        for i in range(4):
            np.testing.assert_array_equal(batched[i], conv3d(x[i], k, b, (1, 2, 1)))

    @given(
        d=st.integers(1, 12), h=st.integers(1, 12), w=st.integers(1, 12),
        kd=st.integers(1, 4), kh=st.integers(1, 4), kw=st.integers(1, 4),
        sd=st.integers(1, 3), sh=st.integers(1, 3), sw=st.integers(1, 3),
    )
    @settings(max_examples=120, deadline=None)
    def test_output_shape_formula(self, d, h, w, kd, kh, kw, sd, sh, sw):
        if kd > d or kh > h or kw > w:
            with pytest.raises(ShapeError):
                conv_output_shape((d, h, w), (kd, kh, kw), (sd, sh, sw))
            return
        out = conv3d(
            np.zeros((1, d, h, w)), np.zeros((1, 1, kd, kh, kw)), np.zeros(1), (sd, sh, sw)
        )
        assert out.shape == (1, (d - kd) // sd + 1, (h - kh) // sh + 1, (w - kw) // sw + 1)


class TestConvGrad:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 4, 4, 4))
        k = rng.normal(size=(3, 2, 2, 2, 2))
        up = np.zeros((3, 3, 3, 3))
        gx, gk, gb = conv3d_grad(up, x, k)
        assert not gx.any() and not gk.any() and not gb.any()

    def test_identity_kernel_grad_input_is_upstream(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 3, 3, 3))
        k = np.ones((1, 1, 1, 1, 1))
        up = rng.normal(size=(1, 3, 3, 3))
        gx, _, _ = conv3d_grad(up, x, k)
        np.testing.assert_array_equal(gx, up)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 3, 4, 4))
        k = rng.normal(size=(2, 2, 2, 2, 2))
        b = rng.normal(size=2)
        up = rng.normal(size=conv3d(x, k, b, (1, 1, 2)).shape)

        gx, gk, gb = conv3d_grad(up, x, k, (1, 1, 2))
        loss_x = lambda v: float(np.sum(up * conv3d(v, k, b, (1, 1, 2))))
        loss_k = lambda v: float(np.sum(up * conv3d(x, v, b, (1, 1, 2))))
        loss_b = lambda v: float(np.sum(up * conv3d(x, k, v, (1, 1, 2))))
        assert rel_err(gx, finite_diff_grad(loss_x, x.copy())) < 1e-4
        assert rel_err(gk, finite_diff_grad(loss_k, k.copy())) < 1e-4
        assert rel_err(gb, finite_diff_grad(loss_b, b.copy())) < 1e-4

    def test_upstream_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            conv3d_grad(np.zeros((1, 2, 2, 2)), np.zeros((1, 4, 4, 4)), np.zeros((1, 1, 2, 2, 2)))


class TestMaxPool:
    def test_constant_input_first_index_argmax(self):
        x = np.full((1, 4, 4, 4), 7.0)
        out, argmax = maxpool3d(x, (2, 2, 2), (2, 2, 2))
        assert np.all(out == 7.0)
        # first element of each window, scanning row-major
        ref_out, ref_arg = naive_maxpool3d(x, (2, 2, 2), (2, 2, 2))
        np.testing.assert_array_equal(argmax, ref_arg)

    def test_blocks_of_enumerated_values(self):
        x = np.arange(64, dtype=np.float64).reshape(1, 4, 4, 4)
        out, argmax = maxpool3d(x, (2, 2, 2), (2, 2, 2))
        ref_out, ref_arg = naive_maxpool3d(x, (2, 2, 2), (2, 2, 2))
        np.testing.assert_array_equal(out, ref_out)
        np.testing.assert_array_equal(argmax, ref_arg)
        # each block's max is its own bottom-right corner value
        assert out.max() == 63.0

    def test_trailing_remainder_discarded(self):
        x = np.zeros((1, 5, 5, 5))
        out, _ = maxpool3d(x, (2, 2, 2), (2, 2, 2))
        assert out.shape == (1, 2, 2, 2)

    def test_matches_naive_on_random_shapes(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            c = int(rng.integers(1, 4))
            dims = rng.integers(2, 8, size=3)
            window = tuple(int(rng.integers(1, d + 1)) for d in dims)
            stride = tuple(int(s) for s in rng.integers(1, 4, size=3))
            x = rng.normal(size=(c, *dims))
            out, argmax = maxpool3d(x, window, stride)
            ref_out, ref_arg = naive_maxpool3d(x, window, stride)
            np.testing.assert_array_equal(out, ref_out)
            np.testing.assert_array_equal(argmax, ref_arg)

    def test_output_dominates_window(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 6, 6, 6))
        window, stride = (3, 2, 2), (2, 2, 2)
        out, _ = maxpool3d(x, window, stride)
        for c in range(out.shape[0]):
            for d in range(out.shape[1]):
                for h in range(out.shape[2]):
                    for w in range(out.shape[3]):
                        patch = x[
                            c,
                            d * stride[0] : d * stride[0] + window[0],
                            h * stride[1] : h * stride[1] + window[1],
                            w * stride[2] : w * stride[2] + window[2],
                        ]
                        assert np.all(out[c, d, h, w] >= patch)

    def test_window_too_large_raises(self):
        with pytest.raises(ShapeError):
            maxpool3d(np.zeros((1, 2, 2, 2)), (3, 2, 2), (1, 1, 1))


class TestMaxPoolGrad:
    def test_zero_upstream(self):
        x = np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2)
        _, argmax = maxpool3d(x, (2, 2, 2), (2, 2, 2))
        grad = maxpool3d_grad(np.zeros((1, 1, 1, 1)), argmax, (1, 2, 2, 2))
        assert not grad.any()

    def test_routing_conserves_mass(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 4, 4, 4))
        out, argmax = maxpool3d(x, (2, 2, 2), (2, 2, 2))
        up = rng.normal(size=out.shape)
        grad = maxpool3d_grad(up, argmax, x.shape)
        assert abs(grad.sum() - up.sum()) < 1e-12

    def test_matches_finite_differences_away_from_ties(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(1, 4, 4, 4))  # continuous values: ties have measure zero
        window, stride = (2, 2, 2), (1, 2, 2)
        out, argmax = maxpool3d(x, window, stride)
        up = rng.normal(size=out.shape)
        grad = maxpool3d_grad(up, argmax, x.shape)

        def loss(v):
            o, _ = maxpool3d(v, window, stride)
            return float(np.sum(up * o))

        assert rel_err(grad, finite_diff_grad(loss, x.copy())) < 1e-4

    def test_out_of_bounds_index_rejected(self):
        bad = np.array([[[[999]]]], dtype=np.int64)
        with pytest.raises(RuntimeError):
            maxpool3d_grad(np.ones((1, 1, 1, 1)), bad, (1, 2, 2, 2))

    def test_batch_routing_matches_per_sample(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 2, 4, 4, 4))
        out, argmax = maxpool3d_batch(x, (2, 2, 2), (2, 2, 2))
        up = rng.normal(size=out.shape)
        from deeprink.kernels import maxpool3d_grad_batch

        grads = maxpool3d_grad_batch(up, argmax, x.shape[1:])
        for i in range(3):
            np.testing.assert_array_equal(
                grads[i], maxpool3d_grad(up[i], argmax[i], x.shape[1:])
            )


def test_all_outputs_finite_for_finite_inputs():
    rng = np.random.default_rng(12)
    x = rng.normal(size=(2, 5, 5, 5)) * 1e6
    k = rng.normal(size=(3, 2, 3, 3, 3))
    out = conv3d(x, k, rng.normal(size=3))
    assert np.all(np.isfinite(out))
    pooled, argmax = maxpool3d(x, (2, 2, 2), (2, 2, 2))
    assert np.all(np.isfinite(pooled))
