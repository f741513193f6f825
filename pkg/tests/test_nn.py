"""Network tests: determinism, hand-computed cases, finite-difference oracles."""

import math

import numpy as np
import pytest

from deeprink import nn
from deeprink.errors import ArchitectureError, ShapeError
from deeprink.nn import (
    ArchitectureSpec,
    ConvLayer,
    DenseLayer,
    FlattenLayer,
    Hyperparameters,
    PoolLayer,
    ReluLayer,
    SigmoidLayer,
    arch_from_text,
    arch_to_text,
    backward,
    build_model,
    default_architecture,
    forward,
    grad_check,
    init_velocity,
    param_count,
    sgd_step,
    weighted_bce,
)

LN2 = 0.6931471805599453


def tiny_dense_arch(inputs=2, hidden=None, k=1):
    layers = [FlattenLayer()]
    if hidden:
        layers += [DenseLayer(units=hidden), ReluLayer()]
    layers += [DenseLayer(units=k), SigmoidLayer()]
    return ArchitectureSpec(input_shape=(1, 1, 1, inputs), layers=tuple(layers))


class TestArchitecture:
    def test_param_count_conv_block(self):
        arch = ArchitectureSpec(
            input_shape=(1, 15, 32, 32),
            layers=(
                ConvLayer(filters=8, kernel=(3, 3, 3)),
                ReluLayer(),
                FlattenLayer(),
                DenseLayer(units=1),
                SigmoidLayer(),
            ),
        )
        # conv alone is 8*27 + 8 = 224
        dense_in = 8 * 13 * 30 * 30
        assert param_count(arch) == 224 + dense_in + 1

    def test_param_count_default_micro_architecture(self):
        assert param_count(default_architecture(k=4)) == 77_748

    def test_param_count_dense_only(self):
        assert param_count(tiny_dense_arch(inputs=1)) == 2

    def test_param_count_no_parametric_layers_invalid(self):
        arch = ArchitectureSpec(input_shape=(1, 2, 2, 2), layers=(SigmoidLayer(),))
        with pytest.raises(ArchitectureError):
            param_count(arch)

    def test_param_count_matches_allocation(self):
        arch = default_architecture(k=3)
        model = build_model(arch, seed=0)
        allocated = sum(w.size + b.size for w, b in model.params)
        assert allocated == param_count(arch)

    def test_must_end_in_dense_sigmoid(self):
        arch = ArchitectureSpec(
            input_shape=(1, 2, 2, 2), layers=(FlattenLayer(), DenseLayer(units=2))
        )
        with pytest.raises(ArchitectureError):
            nn.layer_shapes(arch)

    def test_kernel_larger_than_input_rejected(self):
        arch = ArchitectureSpec(
            input_shape=(1, 2, 4, 4),
            layers=(
                ConvLayer(filters=2, kernel=(3, 3, 3)),
                FlattenLayer(),
                DenseLayer(units=1),
                SigmoidLayer(),
            ),
        )
        with pytest.raises(ArchitectureError):
            nn.layer_shapes(arch)

    def test_text_round_trip(self):
        arch = default_architecture(k=4)
        text = arch_to_text(arch)
        assert arch_from_text(text) == arch
        assert arch_to_text(arch_from_text(text)) == text

    def test_text_parse_default_stride_and_comments(self):
        text = """
        # a comment
        input 1,4,8,8
        conv3d filters=2 kernel=2,2,2
        maxpool3d window=2,2,2
        flatten
        dense units=3
        sigmoid
        """
        arch = arch_from_text(text)
        assert arch.layers[0].stride == (1, 1, 1)
        assert arch.layers[1].stride == (2, 2, 2)
        assert arch.output_count() == 3

    def test_text_parse_errors_carry_line_numbers(self):
        with pytest.raises(ArchitectureError, match="line 2"):
            arch_from_text("input 1,1,1,1\nconv3d filters=x kernel=1,1,1\n")

    def test_hyperparameter_defaults(self):
        h = Hyperparameters()
        assert (h.mu, h.alpha) == (0.7, 0.5)
        assert (h.window_size, h.window_overlap) == (15, 5)
        assert (h.resize_factor, h.split_ratio) == (4, 0.7)

    def test_hyperparameter_validation(self):
        with pytest.raises(ValueError):
            Hyperparameters(mu=0.0)
        with pytest.raises(ValueError):
            Hyperparameters(learning_rate=-1)


class TestBuildModel:
    def test_determinism(self):
        arch = default_architecture(k=2)
        m1 = build_model(arch, seed=9)
        m2 = build_model(arch, seed=9)
        for (w1, b1), (w2, b2) in zip(m1.params, m2.params):
            np.testing.assert_array_equal(w1, w2)
            np.testing.assert_array_equal(b1, b2)

    def test_seeds_differ(self):
        arch = tiny_dense_arch(inputs=8, hidden=4)
        m1 = build_model(arch, seed=1)
        m2 = build_model(arch, seed=2)
        assert not np.array_equal(m1.params[0][0], m2.params[0][0])

    def test_init_within_fan_in_bound(self):
        arch = default_architecture(k=4)
        model = build_model(arch, seed=3)
        w_conv1 = model.params[0][0]
        lim = math.sqrt(6.0 / 27)
        assert np.all(np.abs(w_conv1) <= lim)
        assert not model.params[0][1].any()


class TestForward:
    def test_zero_params_give_half(self):
        arch = tiny_dense_arch(inputs=3, k=2)
        model = build_model(arch, seed=0)
        model.params = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.params]
        conf, _ = forward(model, np.random.default_rng(0).normal(size=(4, 1, 1, 1, 3)))
        np.testing.assert_array_equal(conf, np.full((4, 2), 0.5))

    def test_relu_clamps(self):
        x = np.array([-1.0, 2.0])
        assert np.array_equal(x * (x > 0), np.array([0.0, 2.0]))

    def test_hand_computed_dense_sigmoid(self):
        arch = tiny_dense_arch(inputs=2)
        model = build_model(arch, seed=0)
        w = np.array([[0.3], [-0.7]])
        b = np.array([0.2])
        model.params = [(w, b)]
        x = np.array([1.5, 2.0])
        conf, _ = forward(model, x.reshape(1, 1, 1, 1, 2))
        expected = 1.0 / (1.0 + math.exp(-(0.3 * 1.5 - 0.7 * 2.0 + 0.2)))
        assert abs(conf[0, 0] - expected) < 1e-15

    def test_deterministic(self):
        arch = default_architecture(k=2)
        model = build_model(arch, seed=5)
        batch = np.random.default_rng(1).normal(size=(2, 1, 15, 32, 32))
        c1, _ = forward(model, batch)
        c2, _ = forward(model, batch)
        np.testing.assert_array_equal(c1, c2)

    def test_confidences_strictly_inside_unit_interval(self):
        arch = default_architecture(k=3)
        model = build_model(arch, seed=7)
        batch = np.random.default_rng(2).normal(size=(3, 1, 15, 32, 32))
        conf, _ = forward(model, batch)
        assert np.all(conf > 0) and np.all(conf < 1)

    def test_shape_mismatch_raises(self):
        model = build_model(tiny_dense_arch(inputs=2), seed=0)
        with pytest.raises(ShapeError):
            forward(model, np.zeros((1, 1, 1, 1, 3)))


class TestWeightedBce:
    def test_confident_correct_loss_vanishes(self):
        loss, _ = weighted_bce(np.array([[1.0 - 1e-15]]), np.array([[1.0]]), [1.0])
        assert loss < 1e-11

    def test_half_confidence_gives_ln2(self):
        loss, _ = weighted_bce(np.array([[0.5]]), np.array([[1.0]]), [1.0])
        assert abs(loss - LN2) < 1e-12

    def test_weight_scales_positive_term(self):
        loss, _ = weighted_bce(np.array([[0.5]]), np.array([[1.0]]), [2.0])
        assert abs(loss - 2 * LN2) < 1e-12
        # negative term is untouched by the weight
        loss_neg, _ = weighted_bce(np.array([[0.5]]), np.array([[0.0]]), [2.0])
        assert abs(loss_neg - LN2) < 1e-12

    def test_weight_one_equals_unweighted(self):
        rng = np.random.default_rng(3)
        conf = rng.uniform(0.05, 0.95, size=(6, 4))
        labels = rng.integers(0, 2, size=(6, 4)).astype(float)
        loss_w, grad_w = weighted_bce(conf, labels, np.ones(4))
        manual = -np.mean(labels * np.log(conf) + (1 - labels) * np.log(1 - conf))
        assert abs(loss_w - manual) < 1e-12

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(4)
        conf = rng.uniform(0.01, 0.99, size=(5, 3))
        labels = rng.integers(0, 2, size=(5, 3)).astype(float)
        loss, _ = weighted_bce(conf, labels, np.array([1.0, 1.5, 3.0]))
        assert loss >= 0

    def test_rejects_subunit_weights(self):
        with pytest.raises(ValueError):
            weighted_bce(np.array([[0.5]]), np.array([[1.0]]), [0.5])

    def test_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(5)
        conf = rng.uniform(0.1, 0.9, size=(3, 2))
        labels = rng.integers(0, 2, size=(3, 2)).astype(float)
        w = np.array([1.0, 2.5])
        _, grad = weighted_bce(conf, labels, w)
        h = 1e-7
        for i in range(conf.shape[0]):
            for j in range(conf.shape[1]):
                cp = conf.copy()
                cp[i, j] += h
                lp, _ = weighted_bce(cp, labels, w)
                cp[i, j] -= 2 * h
                lm, _ = weighted_bce(cp, labels, w)
                numeric = (lp - lm) / (2 * h)
                assert abs(grad[i, j] - numeric) < 1e-6


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        arch = default_architecture(k=2)
        model = build_model(arch, seed=1)
        batch = np.random.default_rng(6).normal(size=(2, 1, 15, 32, 32))
        _, cache = forward(model, batch)
        grads = backward(model, cache, np.zeros((2, 2)))
        assert all(not gw.any() and not gb.any() for gw, gb in grads)

    def test_single_dense_layer_outer_product(self):
        arch = tiny_dense_arch(inputs=3, k=2)
        model = build_model(arch, seed=2)
        x = np.random.default_rng(7).normal(size=(1, 1, 1, 1, 3))
        conf, cache = forward(model, x)
        g_conf = np.array([[0.25, -0.5]])
        grads = backward(model, cache, g_conf)
        g_pre = g_conf * conf * (1 - conf)  # through the sigmoid
        expected_gw = np.outer(x.reshape(3), g_pre.reshape(2))
        np.testing.assert_allclose(grads[0][0], expected_gw, atol=1e-15)
        np.testing.assert_allclose(grads[0][1], g_pre.reshape(2), atol=1e-15)


class TestSgd:
    def test_plain_step(self):
        arch = tiny_dense_arch(inputs=1)
        model = build_model(arch, seed=0)
        model.params = [(np.zeros((1, 1)), np.zeros(1))]
        grads = [(np.ones((1, 1)), np.zeros(1))]
        hyper = Hyperparameters(learning_rate=0.1, momentum=0.0)
        sgd_step(model, grads, hyper, init_velocity(model))
        assert abs(model.params[0][0][0, 0] + 0.1) < 1e-15

    def test_zero_gradient_is_noop(self):
        arch = tiny_dense_arch(inputs=4, hidden=3)
        model = build_model(arch, seed=8)
        before = [(w.copy(), b.copy()) for w, b in model.params]
        grads = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.params]
        sgd_step(model, grads, Hyperparameters(), init_velocity(model))
        for (w, b), (w0, b0) in zip(model.params, before):
            np.testing.assert_array_equal(w, w0)
            np.testing.assert_array_equal(b, b0)

    def test_momentum_sequence_matches_hand_calc(self):
        arch = tiny_dense_arch(inputs=1)
        model = build_model(arch, seed=0)
        model.params = [(np.array([[1.0]]), np.zeros(1))]
        hyper = Hyperparameters(learning_rate=0.1, momentum=0.9)
        vel = init_velocity(model)
        g = [(np.array([[1.0]]), np.zeros(1))]
        sgd_step(model, g, hyper, vel)  # v = -0.1, theta = 0.9
        sgd_step(model, g, hyper, vel)  # v = -0.19, theta = 0.71
        assert abs(vel[0][0][0, 0] + 0.19) < 1e-15
        assert abs(model.params[0][0][0, 0] - 0.71) < 1e-15

    def test_shape_mismatch_raises(self):
        model = build_model(tiny_dense_arch(inputs=2), seed=0)
        bad = [(np.zeros((3, 3)), np.zeros(1))]
        with pytest.raises(ShapeError):
            sgd_step(model, bad, Hyperparameters(), init_velocity(model))


class TestGradCheck:
    def test_dense_model_tight_tolerance(self):
        arch = tiny_dense_arch(inputs=4, hidden=5, k=2)
        model = build_model(arch, seed=11)
        rng = np.random.default_rng(11)
        batch = rng.normal(size=(4, 1, 1, 1, 4))
        labels = rng.integers(0, 2, size=(4, 2)).astype(float)
        report = grad_check(model, batch, labels, np.array([1.0, 2.0]))
        assert max(report.values()) < 1e-6

    def test_default_micro_architecture(self):
        arch = default_architecture(k=2)
        model = build_model(arch, seed=12)
        rng = np.random.default_rng(12)
        # moderate scale keeps the output sigmoids away from saturation,
        # where true gradients drop below finite-difference resolution
        batch = rng.normal(size=(2, 1, 15, 32, 32)) * 0.3
        labels = rng.integers(0, 2, size=(2, 2)).astype(float)
        report = grad_check(model, batch, labels, np.ones(2), sample=20)
        assert set(report) == {"conv3d_0", "conv3d_1", "dense_0", "dense_1"}
        assert max(report.values()) < 1e-4

    def test_corrupted_gradient_detected(self, monkeypatch):
        arch = tiny_dense_arch(inputs=4, hidden=5, k=2)
        model = build_model(arch, seed=13)
        rng = np.random.default_rng(13)
        batch = rng.normal(size=(3, 1, 1, 1, 4))
        labels = rng.integers(0, 2, size=(3, 2)).astype(float)

        true_backward = nn.backward

        def corrupted(model_, cache_, g_):
            return [(gw * 1.01, gb * 1.01) for gw, gb in true_backward(model_, cache_, g_)]

        monkeypatch.setattr(nn, "backward", corrupted)
        report = grad_check(model, batch, labels, np.ones(2))
        assert max(report.values()) > 1e-4
