"""Attention block tests: step-by-step oracles, ablations, gradient checks."""

import math

import numpy as np
import pytest

from resnesat import attention, kernels
from resnesat.gradcheck import gradient_check
from resnesat.tensor import precision_mode

import oracles


@pytest.fixture(autouse=True)
def float64_mode():
    with precision_mode("float64"):
        yield


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def randomize_batchnorm(layer, rng):
    """Give every batch-norm non-trivial affine weights and running stats."""
    for name, p in layer.named_parameters():
        if name.endswith("gamma"):
            p.value[:] = rng.uniform(0.5, 1.5, p.value.shape)
        elif name.endswith("beta"):
            p.value[:] = rng.uniform(-0.5, 0.5, p.value.shape)
        elif name.endswith("running_mean"):
            p.value[:] = rng.uniform(-0.5, 0.5, p.value.shape)
        elif name.endswith("running_var"):
            p.value[:] = rng.uniform(0.5, 2.0, p.value.shape)


def eval_bn(v, gamma, beta, mean, var, eps=1e-5):
    return gamma.reshape(1, -1, 1, 1) * (v - mean.reshape(1, -1, 1, 1)) / np.sqrt(
        var.reshape(1, -1, 1, 1) + eps) + beta.reshape(1, -1, 1, 1)


def splat_oracle_eval(layer, x):
    """Explicit-loop re-implementation of the split-attention forward (eval mode)."""
    radix, card, channels = layer.radix, layer.cardinality, layer.channels
    conv = layer.layers["conv"]
    u = oracles.conv2d_loops(
        x, conv.params["weight"].value, conv.params["bias"].value,
        stride=conv.spec.stride, padding=conv.spec.padding, groups=conv.spec.groups)
    b, _, h, w = u.shape

    s = np.zeros((b, channels, h, w))
    for r in range(radix):
        s += u[:, r * channels:(r + 1) * channels]
    pooled = np.zeros((b, channels, 1, 1))
    for n in range(b):
        for c in range(channels):
            pooled[n, c, 0, 0] = s[n, c].sum() / (h * w)

    fc1 = layer.layers["fc1"]
    a = oracles.conv2d_loops(pooled, fc1.params["weight"].value, fc1.params["bias"].value,
                             stride=1, padding=0, groups=card)
    bn = layer.layers["bn1"]
    a = eval_bn(a, bn.params["gamma"].value, bn.params["beta"].value,
                bn.params["running_mean"].value, bn.params["running_var"].value, bn.eps)
    a = np.maximum(a, 0.0)
    fc2 = layer.layers["fc2"]
    logits = oracles.conv2d_loops(a, fc2.params["weight"].value, fc2.params["bias"].value,
                                  stride=1, padding=0, groups=card)[:, :, 0, 0]

    per_group = channels // card
    att = np.zeros((b, radix * channels))
    for n in range(b):
        for k in range(card):
            for j in range(per_group):
                raw = [logits[n, k * radix * per_group + r * per_group + j] for r in range(radix)]
                if radix == 1:
                    weights = [1.0 / (1.0 + math.exp(-raw[0]))]
                else:
                    top = max(raw)
                    exps = [math.exp(v - top) for v in raw]
                    weights = [e / sum(exps) for e in exps]
                for r in range(radix):
                    att[n, r * channels + k * per_group + j] = weights[r]

    out = np.zeros((b, channels, h, w))
    for n in range(b):
        for c in range(channels):
            for r in range(radix):
                out[n, c] += att[n, r * channels + c] * u[n, r * channels + c]
    return out


def sa_oracle(layer, x):
    """Explicit-loop spatial attention: mean/max maps, conv, sigmoid, multiply."""
    b, c, h, w = x.shape
    stacked = np.zeros((b, 2, h, w))
    for n in range(b):
        for i in range(h):
            for j in range(w):
                stacked[n, 0, i, j] = sum(x[n, ch, i, j] for ch in range(c)) / c
                stacked[n, 1, i, j] = max(x[n, ch, i, j] for ch in range(c))
    conv = layer.layers["conv"]
    pre = oracles.conv2d_loops(stacked, conv.params["weight"].value,
                               conv.params["bias"].value,
                               stride=1, padding=(layer.kernel - 1) // 2)
    m = 1.0 / (1.0 + np.exp(-pre))
    out = np.zeros_like(x)
    for ch in range(c):
        out[:, ch] = x[:, ch] * m[:, 0]
    return out, m


class TestSplAtConv:
    def test_equal_logits_give_mean_of_branches(self):
        layer = attention.SplAtConv2d(4, 4, radix=2, rng=np.random.default_rng(1))
        layer.layers["fc2"].params["weight"].value[:] = 0
        layer.layers["fc2"].params["bias"].value[:] = 0.7
        x = rand((1, 4, 5, 5), seed=2)
        out = layer.forward(x)
        u = kernels.conv2d_fast(x, layer.layers["conv"].params["weight"].value,
                                layer.layers["conv"].params["bias"].value,
                                layer.layers["conv"].spec)
        mean_of_branches = 0.5 * (u[:, :4] + u[:, 4:])
        np.testing.assert_allclose(out, mean_of_branches, rtol=1e-10)

    def test_radix_one_saturated_sigmoid_passes_branch(self):
        layer = attention.SplAtConv2d(4, 4, radix=1, rng=np.random.default_rng(3))
        layer.layers["fc2"].params["weight"].value[:] = 0
        layer.layers["fc2"].params["bias"].value[:] = 50.0
        x = rand((1, 4, 5, 5), seed=4)
        out = layer.forward(x)
        u = kernels.conv2d_fast(x, layer.layers["conv"].params["weight"].value,
                                layer.layers["conv"].params["bias"].value,
                                layer.layers["conv"].spec)
        np.testing.assert_allclose(out, u, rtol=1e-6)

    def test_matches_step_by_step_oracle(self):
        rng = np.random.default_rng(5)
        layer = attention.SplAtConv2d(4, 4, radix=2, cardinality=1, reduction=4, rng=rng)
        randomize_batchnorm(layer, rng)
        x = rand((1, 4, 6, 6), seed=6)
        out = layer.forward(x, train=False)
        ref = splat_oracle_eval(layer, x)
        np.testing.assert_allclose(out, ref, rtol=1e-9)

    def test_cardinality_two_matches_oracle(self):
        rng = np.random.default_rng(7)
        layer = attention.SplAtConv2d(8, 8, radix=2, cardinality=2, reduction=4, rng=rng)
        randomize_batchnorm(layer, rng)
        x = rand((2, 8, 5, 5), seed=8)
        out = layer.forward(x, train=False)
        ref = splat_oracle_eval(layer, x)
        np.testing.assert_allclose(out, ref, rtol=1e-9)

    def test_attention_weights_sum_to_one(self):
        for card in (1, 2):
            layer = attention.SplAtConv2d(8, 8, radix=2, cardinality=card,
                                          rng=np.random.default_rng(9))
            x = rand((2, 8, 4, 4), seed=10)
            layer.forward(x)
            branches, att, _ = layer._ctx
            sums = att.reshape(2, 2, 8).sum(axis=1)
            np.testing.assert_allclose(sums, np.ones((2, 8)), atol=1e-12)

    def test_attention_weights_sum_to_one_float32(self):
        with precision_mode("float32"):
            layer = attention.SplAtConv2d(8, 8, radix=2, rng=np.random.default_rng(9))
            x = rand((2, 8, 4, 4), seed=10).astype(np.float32)
            layer.forward(x)
            _, att, _ = layer._ctx
            assert att.dtype == np.float32
            sums = att.reshape(2, 2, 8).sum(axis=1)
            np.testing.assert_allclose(sums, np.ones((2, 8), dtype=np.float32), atol=1e-6)

    def test_gradient_check(self):
        layer = attention.SplAtConv2d(4, 4, radix=2, rng=np.random.default_rng(11))
        x = rand((2, 4, 5, 5), seed=12)
        report = gradient_check(layer, x, train=True)
        assert report.passed(1e-4), report.summary()

    def test_gradient_check_radix_one(self):
        layer = attention.SplAtConv2d(4, 4, radix=1, rng=np.random.default_rng(13))
        x = rand((2, 4, 5, 5), seed=14)
        report = gradient_check(layer, x, train=True)
        assert report.passed(1e-4), report.summary()

    def test_gradient_check_cardinality_two(self):
        layer = attention.SplAtConv2d(8, 8, radix=2, cardinality=2,
                                      rng=np.random.default_rng(15))
        x = rand((2, 8, 4, 4), seed=16)
        report = gradient_check(layer, x, train=True, param_fraction=0.5)
        assert report.passed(1e-4), report.summary()


class TestSpatialAttention:
    def test_zero_weights_give_half_map(self):
        layer = attention.SpatialAttention(kernel=7, rng=np.random.default_rng(20))
        layer.layers["conv"].params["weight"].value[:] = 0
        layer.layers["conv"].params["bias"].value[:] = 0
        x = rand((1, 3, 5, 5), seed=21)
        out = layer.forward(x)
        np.testing.assert_allclose(layer.last_map, np.full((1, 1, 5, 5), 0.5))
        np.testing.assert_allclose(out, 0.5 * x, rtol=1e-12)

    def test_constant_input_constant_map(self):
        layer = attention.SpatialAttention(kernel=3, rng=np.random.default_rng(22))
        x = np.full((1, 4, 6, 6), 1.7)
        out = layer.forward(x)
        # interior positions see identical windows -> constant map there
        interior = layer.last_map[0, 0, 1:-1, 1:-1]
        assert np.ptp(interior) < 1e-12
        assert np.ptp(out[:, :, 1:-1, 1:-1]) < 1e-12

    def test_matches_explicit_loop_oracle(self):
        layer = attention.SpatialAttention(kernel=7, rng=np.random.default_rng(23))
        x = rand((1, 3, 5, 5), seed=24)
        out = layer.forward(x)
        ref_out, ref_map = sa_oracle(layer, x)
        np.testing.assert_allclose(layer.last_map, ref_map, rtol=1e-10)
        np.testing.assert_allclose(out, ref_out, rtol=1e-10)

    def test_map_in_open_interval_and_output_bounded(self):
        layer = attention.SpatialAttention(kernel=7, rng=np.random.default_rng(25))
        x = rand((2, 5, 8, 8), seed=26) * 10
        out = layer.forward(x)
        assert np.all(layer.last_map > 0) and np.all(layer.last_map < 1)
        assert np.all(np.abs(out) <= np.abs(x))

    def test_frozen_map_backward_is_map_weighted(self):
        layer = attention.SpatialAttention(kernel=3, rng=np.random.default_rng(27))
        layer.override_map = np.full((1, 1, 4, 4), 0.3)
        x = rand((1, 2, 4, 4), seed=28)
        layer.forward(x)
        g = rand((1, 2, 4, 4), seed=29)
        gin = layer.backward(g)
        np.testing.assert_allclose(gin, g * 0.3, rtol=1e-12)

    def test_zero_grad_out(self):
        layer = attention.SpatialAttention(kernel=3, rng=np.random.default_rng(30))
        x = rand((1, 3, 4, 4), seed=31)
        out = layer.forward(x)
        gin = layer.backward(np.zeros_like(out))
        assert not gin.any()
        assert not layer.layers["conv"].params["weight"].grad.any()

    def test_gradient_check(self):
        layer = attention.SpatialAttention(kernel=3, rng=np.random.default_rng(32))
        x = rand((2, 3, 5, 5), seed=33)
        report = gradient_check(layer, x, train=True)
        assert report.passed(1e-4), report.summary()

    def test_parameter_count_is_2kk_plus_1(self):
        layer = attention.SpatialAttention(kernel=7)
        count = sum(p.size for _, p in layer.named_parameters())
        assert count == 2 * 7 * 7 + 1 == 99


def clone_shared_params(src, dst):
    dst_params = dict(dst.named_parameters())
    for name, p in src.named_parameters():
        if name in dst_params:
            dst_params[name].value[:] = p.value
    return dst


class TestBottleneck:
    def test_sa_ablation_identity(self):
        rng = np.random.default_rng(40)
        with_sa = attention.Bottleneck(8, 4, 16, stride=1, sa_enabled=True, rng=rng)
        without = attention.Bottleneck(8, 4, 16, stride=1, sa_enabled=False,
                                       rng=np.random.default_rng(41))
        clone_shared_params(with_sa, without)
        with_sa.layers["sa"].override_map = 1.0
        x = rand((2, 8, 6, 6), seed=42)
        np.testing.assert_array_equal(with_sa.forward(x), without.forward(x))

    def test_zero_input_zero_output(self):
        layer = attention.Bottleneck(4, 2, 8, stride=1, rng=np.random.default_rng(43))
        out = layer.forward(np.zeros((1, 4, 5, 5)))
        np.testing.assert_array_equal(out, np.zeros((1, 8, 5, 5)))

    def test_stride2_matches_composition_oracle(self):
        rng = np.random.default_rng(44)
        layer = attention.Bottleneck(8, 4, 16, stride=2, rng=rng)
        randomize_batchnorm(layer, rng)
        x = rand((1, 8, 8, 8), seed=45)
        out = layer.forward(x, train=False)
        assert out.shape == (1, 16, 4, 4)

        def bn(tag, v):
            b = layer.layers[tag]
            return eval_bn(v, b.params["gamma"].value, b.params["beta"].value,
                           b.params["running_mean"].value, b.params["running_var"].value,
                           b.eps)

        m = kernels.conv2d_naive(x, layer.layers["conv1"].params["weight"].value,
                                 None, layer.layers["conv1"].spec)
        m = np.maximum(bn("bn1", m), 0)
        m = kernels.avg_pool2d(m, 3, 2, 1)
        m = splat_oracle_eval(layer.layers["splat"], m)
        m = kernels.conv2d_naive(m, layer.layers["conv2"].params["weight"].value,
                                 None, layer.layers["conv2"].spec)
        m = bn("bn2", m)
        m, _ = sa_oracle(layer.layers["sa"], m)
        s = kernels.avg_pool2d(x, 3, 2, 1)
        s = kernels.conv2d_naive(s, layer.layers["shortcut_conv"].params["weight"].value,
                                 None, layer.layers["shortcut_conv"].spec)
        s = bn("shortcut_bn", s)
        ref = np.maximum(m + s, 0)
        np.testing.assert_allclose(out, ref, rtol=1e-8)

    def test_full_gradient_check_every_parameter(self):
        layer = attention.Bottleneck(6, 2, 8, stride=2, rng=np.random.default_rng(46))
        x = rand((2, 6, 6, 6), seed=47)
        report = gradient_check(layer, x, train=True)
        assert report.passed(1e-4), report.summary()

    @pytest.mark.parametrize("in_c,width,out_c,stride", [
        (4, 2, 8, 1),    # stage 1 entry: expanding shortcut, no pool
        (8, 2, 8, 1),    # stage 1 repeat: identity shortcut
        (8, 2, 12, 2),   # stage 2 entry: pooled downsample
        (12, 2, 12, 1),  # stage 2 repeat
        (12, 4, 16, 2),  # stage 3 entry
        (16, 4, 16, 1),  # stage 3 repeat
        (16, 4, 20, 2),  # stage 4 entry
        (20, 4, 20, 1),  # stage 4 repeat
    ])
    def test_table_variant_gradient_checks(self, in_c, width, out_c, stride):
        layer = attention.Bottleneck(in_c, width, out_c, stride=stride,
                                     rng=np.random.default_rng(in_c * 100 + stride))
        x = rand((2, in_c, 6, 6), seed=in_c + stride)
        report = gradient_check(layer, x, train=True, param_fraction=0.25)
        assert report.passed(1e-4), report.summary()

    def test_zero_grad_out_gives_zero_grads(self):
        layer = attention.Bottleneck(4, 2, 8, stride=1, rng=np.random.default_rng(48))
        x = rand((2, 4, 5, 5), seed=49)
        out = layer.forward(x, train=True)
        gin = layer.backward(np.zeros_like(out))
        assert not gin.any()
        for _, p in layer.named_parameters():
            if p.trainable:
                assert not p.grad.any()
