import numpy as np
import pytest

from myoloop.nnet import (
    BatchNorm,
    Conv3x3,
    Dense,
    Dropout,
    ReLU,
    ResidualBlock,
    Sequential,
    build_deep,
    build_shallow,
    count_sublayers,
    deep_spec,
    forward,
    grad_check,
    instantiate,
    parameter_count,
    shallow_spec,
    zero_grads,
)
from myoloop.nnet.layers import _same_padding


def naive_conv(x, w, b, stride):
    """Direct-summation convolution oracle, same padding; x is NHWC and the
    kernel is [f, c, kh, kw]."""
    n, h, wd, c = x.shape
    f, _, kh, kw = w.shape
    pt, pb = _same_padding(h, stride, kh)
    pl, pr = _same_padding(wd, stride, kw)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    oh, ow = -(-h // stride), -(-wd // stride)
    out = np.zeros((n, oh, ow, f), dtype=x.dtype)
    for ni in range(n):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, i * stride : i * stride + kh, j * stride : j * stride + kw, :]
                    out[ni, i, j, fi] = np.sum(patch * w[fi].transpose(1, 2, 0)) + b[fi]
    return out


DENSE_TOY = [
    {"kind": "flatten"},
    {"kind": "dense", "n_in": 1024, "n_out": 3},
    {"kind": "relu"},
    {"kind": "linear_output", "n_in": 3, "n_out": 6},
]

CONV_TOY = [
    {"kind": "conv3x3", "c_in": 1, "c_out": 3, "stride": 1},
    {"kind": "batch_norm", "n": 3},
    {"kind": "relu"},
    {
        "kind": "residual",
        "projection": True,
        "stride": 2,
        "inner": [
            {"kind": "conv3x3", "c_in": 3, "c_out": 4, "stride": 2},
            {"kind": "batch_norm", "n": 4},
            {"kind": "relu"},
            {"kind": "conv3x3", "c_in": 4, "c_out": 4, "stride": 1},
            {"kind": "batch_norm", "n": 4},
        ],
    },
    {"kind": "global_avg_pool"},
    {"kind": "linear_output", "n_in": 4, "n_out": 6},
]


class TestConv:
    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("size", [(8, 8), (7, 9)])
    def test_matches_naive_oracle(self, stride, size):
        rng = np.random.default_rng(0)
        conv = Conv3x3(3, 5, rng, stride=stride, dtype=np.float64)
        x = rng.standard_normal((2, *size, 3))
        conv.b[...] = rng.standard_normal(5)
        got = conv.forward(x, train=True)
        want = naive_conv(x, conv.w, conv.b, stride)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_stride1_preserves_size(self):
        rng = np.random.default_rng(1)
        conv = Conv3x3(1, 4, rng, stride=1)
        assert conv.forward(np.zeros((1, 32, 32, 1), np.float32), True).shape == (1, 32, 32, 4)

    def test_stride2_halves_size(self):
        rng = np.random.default_rng(1)
        conv = Conv3x3(4, 8, rng, stride=2)
        assert conv.forward(np.zeros((1, 32, 32, 4), np.float32), True).shape == (1, 16, 16, 8)


class TestGradients:
    def test_dense_only_toy_net(self):
        assert grad_check(DENSE_TOY, seed=0) < 1e-6

    def test_conv_bn_residual_toy_net(self):
        assert grad_check(CONV_TOY, seed=0) < 1e-4

    def test_zero_loss_gives_zero_gradients(self):
        net = instantiate(DENSE_TOY, seed=3, dtype=np.float64)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 32, 32, 1))
        pred = net.forward(x, True)
        zero_grads(net)
        net.backward((2.0 / pred.size) * (pred - pred))  # labels == outputs
        norm = np.sqrt(sum(float((g**2).sum()) for _, g in net.params_and_grads()))
        assert norm < 1e-10


class TestBatchNorm:
    def test_normalized_activations_statistics(self):
        bn = BatchNorm(16, dtype=np.float64)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((128, 16)) * 3.0 + 1.5
        bn.forward(x, train=True)
        assert np.abs(bn.last_xhat.mean(axis=0)).max() < 1e-6
        assert np.abs(bn.last_xhat.var(axis=0) - 1.0).max() < 1e-4

    def test_conv_input_statistics(self):
        bn = BatchNorm(4, dtype=np.float64)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((8, 8, 8, 4)) * 2.0 - 0.7
        bn.forward(x, train=True)
        xhat = bn.last_xhat.reshape(-1, 4)
        assert np.abs(xhat.mean(axis=0)).max() < 1e-6
        assert np.abs(xhat.var(axis=0) - 1.0).max() < 1e-4

    def test_fresh_bn_is_identity_in_eval(self):
        bn = BatchNorm(3)
        x = np.random.default_rng(0).standard_normal((5, 3)).astype(np.float32)
        np.testing.assert_allclose(bn.forward(x, train=False), x, rtol=1e-4)


class TestDropout:
    def test_train_expectation_matches_eval_for_linear_net(self):
        # inverted dropout: E over masks of TRAIN output == EVAL output
        spec = [
            {"kind": "flatten"},
            {"kind": "dropout", "rate": 0.5},
            {"kind": "linear_output", "n_in": 1024, "n_out": 6},
        ]
        net = instantiate(spec, seed=2, dtype=np.float64)
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 32, 32, 1)) * 0.05
        eval_out = net.forward(x, train=False)
        mask_rng = np.random.default_rng(9)
        acc = np.zeros_like(eval_out)
        n_masks = 20_000
        for _ in range(n_masks):
            acc += net.forward(x, train=True, rng=mask_rng)
        mc = acc / n_masks
        assert np.linalg.norm(mc - eval_out) / np.linalg.norm(eval_out) < 0.01

    def test_eval_mode_is_identity(self):
        drop = Dropout(0.5)
        x = np.ones((3, 4))
        np.testing.assert_array_equal(drop.forward(x, train=False), x)

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestResidualBlock:
    def test_zero_convs_reduce_to_relu(self):
        rng = np.random.default_rng(0)
        inner = Sequential(
            [
                Conv3x3(4, 4, rng),
                BatchNorm(4),
                ReLU(),
                Conv3x3(4, 4, rng),
                BatchNorm(4),
            ]
        )
        for layer in inner.layers:
            if isinstance(layer, Conv3x3):
                layer.w[...] = 0
                layer.b[...] = 0
        block = ResidualBlock(inner, projection=None)
        x = rng.standard_normal((2, 8, 8, 4)).astype(np.float32)
        got = block.forward(x, train=False)
        np.testing.assert_allclose(got, np.maximum(x, 0), atol=1e-5)


class TestShallow:
    def test_zero_weights_zero_image_gives_bias(self):
        decoder = build_shallow(seed=0)
        for p, _ in decoder.net.params_and_grads():
            p[...] = 0
        out = forward(decoder, np.zeros((32, 32)))
        np.testing.assert_array_equal(out, np.zeros(6))

    def test_output_shape(self):
        decoder = build_shallow(seed=1)
        assert forward(decoder, np.zeros((32, 32))).shape == (6,)

    def test_parameter_count_closed_form(self):
        decoder = build_shallow(seed=0, hidden=128)
        expected = (
            (1024 * 128 + 128)
            + (128 * 128 + 128)
            + (128 * 128 + 128)
            + (128 * 6 + 6)
        )
        assert parameter_count(decoder.net) == expected

    def test_counted_layers_is_ten(self):
        assert len(shallow_spec()) == 10


class TestDeep:
    def test_stage_output_shapes(self):
        decoder = build_deep(seed=0, widths=(8, 16, 32))
        x = np.zeros((1, 32, 32, 1), dtype=np.float32)
        shapes = []
        for layer in decoder.net.layers:
            x = layer.forward(x, train=False)
            shapes.append(x.shape)
        assert (1, 32, 32, 8) in shapes
        assert (1, 16, 16, 16) in shapes
        assert (1, 8, 8, 32) in shapes
        assert shapes[-1] == (1, 6)

    def test_sublayer_count_matches_hand_enumeration(self):
        # stem: conv+bn+relu = 3; identity block: 2conv+2bn+1relu+add+post-relu = 7
        # projection block: 7 + 1; stages: 3*7 + (8+7+7) + (8+7+7); pool + fc; io = 2
        hand = 3 + 3 * 7 + (8 + 7 + 7) + (8 + 7 + 7) + 1 + 1 + 2
        assert count_sublayers(deep_spec()) == hand == 72

    def test_widths_must_ascend(self):
        with pytest.raises(ValueError, match="ascending"):
            build_deep(seed=0, widths=(16, 8, 32))


class TestForwardContract:
    def test_dense_hand_computation(self):
        rng = np.random.default_rng(0)
        dense = Dense(1, 1, rng, dtype=np.float64)
        dense.w[...] = [[2.5]]
        dense.b[...] = [0.25]
        out = dense.forward(np.array([[3.0]]), train=False)
        assert out[0, 0] == pytest.approx(2.5 * 3.0 + 0.25, abs=1e-15)

    def test_eval_deterministic(self):
        decoder = build_shallow(seed=4)
        image = np.random.default_rng(1).uniform(0, 1, (32, 32))
        a = forward(decoder, image)
        b = forward(decoder, image)
        np.testing.assert_array_equal(a, b)

    def test_eval_output_clamped(self):
        decoder = build_shallow(seed=5)
        # inflate the output layer so raw outputs exceed the clamp
        out_layer = decoder.net.layers[-1]
        out_layer.w[...] *= 1000
        image = np.random.default_rng(2).uniform(0, 5, (32, 32))
        out = forward(decoder, image)
        assert np.all(np.abs(out) <= 1.0)

    def test_shape_error(self):
        decoder = build_shallow(seed=0)
        with pytest.raises(ValueError, match="32, 32"):
            forward(decoder, np.zeros((16, 16)))

    def test_bad_mode(self):
        decoder = build_shallow(seed=0)
        with pytest.raises(ValueError, match="mode"):
            forward(decoder, np.zeros((32, 32)), mode="fast")
