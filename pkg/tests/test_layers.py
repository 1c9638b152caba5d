"""Model chain semantics: forward modes, BN contract, reference oracle."""

import numpy as np
import pytest

import e2d.diffnet as d
from e2d.diffnet.layers import BN_EPS, BN_MOMENTUM, LayerSpec


# -- straight-line reference implementations (no graph, plain loops) ----------

def ref_conv(x, w, pad, stride):
    n, c, h, ww = x.shape
    oc, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, ww + 2 * pad), dtype=np.float64)
    xp[:, :, pad : pad + h, pad : pad + ww] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[b, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[b, o, i, j] = (patch * w[o]).sum()
    return out


def ref_bn_eval(x, gamma, beta, rm, rv):
    g = gamma.reshape(1, -1, 1, 1)
    b = beta.reshape(1, -1, 1, 1)
    return g * (x - rm.reshape(1, -1, 1, 1)) / np.sqrt(rv.reshape(1, -1, 1, 1) + BN_EPS) + b


def ref_maxpool(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=np.float64)
    for i in range(h // 2):
        for j in range(w // 2):
            out[:, :, i, j] = x[:, :, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max(axis=(2, 3))
    return out


def two_block_specs():
    return [
        LayerSpec("conv", in_channels=2, out_channels=3, kernel=3, stride=1, padding=1),
        LayerSpec("batchnorm", in_channels=3),
        LayerSpec("relu"),
        LayerSpec("maxpool"),
        LayerSpec("conv", in_channels=3, out_channels=4, kernel=3, stride=1, padding=1),
        LayerSpec("batchnorm", in_channels=4),
        LayerSpec("relu"),
        LayerSpec("avgpool-global"),
        LayerSpec("linear", in_features=4, out_features=5),
    ]


class TestForwardModes:
    def test_zero_weight_model_outputs_bias(self):
        model = d.Model(d.convnet3(1, 6, width=4), seed=0)
        bias_value = np.arange(6, dtype=np.float32) * 0.5
        for name, p in model.parameters():
            p.data = np.zeros_like(p.data)
        for kind, layer in model.layers:
            if kind == "linear":
                layer.bias.data = bias_value.copy()
        x = d.Tensor(np.random.default_rng(0).normal(size=(3, 1, 8, 8)))
        for mode in ("train", "eval", "capture"):
            logits = model.forward(x, mode).logits.data
            np.testing.assert_allclose(logits, np.tile(bias_value, (3, 1)), atol=1e-6)

    def test_constant_batch_zero_variance(self):
        # padding would break constancy at the borders, so use padding=0:
        # constant inputs then stay constant through every BN input
        specs = [
            LayerSpec("conv", in_channels=2, out_channels=3, kernel=3, stride=1, padding=0),
            LayerSpec("batchnorm", in_channels=3),
            LayerSpec("relu"),
            LayerSpec("conv", in_channels=3, out_channels=4, kernel=3, stride=1, padding=0),
            LayerSpec("batchnorm", in_channels=4),
            LayerSpec("relu"),
            LayerSpec("avgpool-global"),
            LayerSpec("linear", in_features=4, out_features=5),
        ]
        model = d.Model(specs, seed=1)
        batch = d.Tensor(np.full((5, 2, 8, 8), 0.37, dtype=np.float32))
        res = model.forward(batch, "capture")
        assert len(res.bn_batch) == 2
        for _, var in res.bn_batch:
            np.testing.assert_allclose(var.data, 0.0, atol=1e-9)

    def test_repeated_image_stats_match_single(self):
        # (N,H,W) batch statistics of B copies equal those of one copy
        model = d.Model(two_block_specs(), seed=1)
        one = np.random.default_rng(2).normal(size=(1, 2, 8, 8)).astype(np.float32)
        r1 = model.forward(d.Tensor(one), "capture")
        r5 = model.forward(d.Tensor(np.repeat(one, 5, axis=0)), "capture")
        for (m1, v1), (m5, v5) in zip(r1.bn_batch, r5.bn_batch):
            np.testing.assert_allclose(m1.data, m5.data, atol=1e-6)
            np.testing.assert_allclose(v1.data, v5.data, atol=1e-6)

    def test_eval_returns_no_batch_stats(self):
        model = d.Model(two_block_specs(), seed=1)
        x = d.Tensor(np.random.default_rng(3).normal(size=(2, 2, 8, 8)))
        assert model.forward(x, "eval").bn_batch == []
        assert model.forward(x, "train").bn_batch == []

    def test_reference_logits_match(self):
        # dual-implementation oracle: graph forward vs straight-line loops
        model = d.Model(two_block_specs(), seed=7)
        rng = np.random.default_rng(7)
        for bn in model.bn_layers():
            bn.running_mean = rng.normal(scale=0.2, size=bn.running_mean.shape).astype(np.float32)
            bn.running_var = rng.uniform(0.5, 1.5, size=bn.running_var.shape).astype(np.float32)
        x = rng.normal(size=(4, 2, 8, 8)).astype(np.float32)

        got = model.forward(d.Tensor(x), "eval").logits.data

        conv1, bn1 = model.layers[0][1], model.layers[1][1]
        conv2, bn2 = model.layers[4][1], model.layers[5][1]
        lin = model.layers[8][1]
        h = ref_conv(x, conv1.weight.data, 1, 1)
        h = ref_bn_eval(h, bn1.gamma.data, bn1.beta.data, bn1.running_mean, bn1.running_var)
        h = np.maximum(h, 0.0)
        h = ref_maxpool(h)
        h = ref_conv(h, conv2.weight.data, 1, 1)
        h = ref_bn_eval(h, bn2.gamma.data, bn2.beta.data, bn2.running_mean, bn2.running_var)
        h = np.maximum(h, 0.0)
        feats = h.mean(axis=(2, 3))
        want = feats @ lin.weight.data + lin.bias.data

        err = np.abs(got - want).max() / np.abs(want).max()
        assert err < 1e-5

    def test_bad_mode_and_channels(self):
        model = d.Model(two_block_specs(), seed=0)
        x = d.Tensor(np.zeros((1, 2, 8, 8)) + 1.0)
        with pytest.raises(ValueError):
            model.forward(x, "frozen")
        with pytest.raises(ValueError):
            model.forward(d.Tensor(np.ones((1, 3, 8, 8))), "eval")

    def test_penultimate_and_last_conv_exposed(self):
        model = d.Model(d.convnet3(1, 4, width=4), seed=0)
        res = model.forward(d.Tensor(np.ones((2, 1, 8, 8))), "eval")
        assert res.penultimate.shape == (2, 16)
        assert res.last_conv.shape[1] == 16


class TestBatchNormContract:
    def _bn_and_input(self, seed=0):
        bn_model = d.Model(two_block_specs(), seed=seed)
        x = d.Tensor(np.random.default_rng(seed).normal(loc=0.5, scale=2.0, size=(4, 2, 8, 8)))
        return bn_model, x

    def test_capture_never_mutates_running_stats(self):
        model, x = self._bn_and_input()
        before = model.bn_stats()
        model.forward(x, "capture")
        model.forward(x, "capture")
        after = model.bn_stats()
        for m0, m1 in zip(before.means, after.means):
            assert np.array_equal(m0, m1)
        for v0, v1 in zip(before.variances, after.variances):
            assert np.array_equal(v0, v1)

    def test_eval_never_mutates_running_stats(self):
        model, x = self._bn_and_input()
        before = model.bn_stats()
        model.forward(x, "eval")
        after = model.bn_stats()
        for v0, v1 in zip(before.variances, after.variances):
            assert np.array_equal(v0, v1)

    def test_train_updates_are_documented_ema(self):
        model, x = self._bn_and_input()
        bn = model.bn_layers()[0]
        rm0, rv0 = bn.running_mean.copy(), bn.running_var.copy()
        # recompute the expected first-BN input statistics directly
        conv = model.layers[0][1]
        pre = ref_conv(x.data, conv.weight.data, 1, 1)
        mu = pre.mean(axis=(0, 2, 3))
        var_b = pre.var(axis=(0, 2, 3))
        count = pre.shape[0] * pre.shape[2] * pre.shape[3]
        var_u = var_b * count / (count - 1)
        model.forward(x, "train")
        np.testing.assert_allclose(
            bn.running_mean, (1 - BN_MOMENTUM) * rm0 + BN_MOMENTUM * mu, rtol=1e-4
        )
        np.testing.assert_allclose(
            bn.running_var, (1 - BN_MOMENTUM) * rv0 + BN_MOMENTUM * var_u, rtol=1e-4
        )

    def test_eval_is_pure_function(self):
        model, x = self._bn_and_input()
        a = model.forward(x, "eval").logits.data
        b = model.forward(x, "eval").logits.data
        assert np.array_equal(a, b)

    def test_bnstats_positive_variance_enforced(self):
        with pytest.raises(ValueError):
            d.BNStats([np.zeros(3)], [np.array([1.0, 0.0, 1.0])])


class TestModelPlumbing:
    def test_chain_validation(self):
        with pytest.raises(ValueError):
            d.Model([LayerSpec("conv", in_channels=1, out_channels=2, kernel=3,
                               stride=1, padding=1),
                     LayerSpec("relu"),
                     LayerSpec("linear", in_features=2, out_features=2)])
        with pytest.raises(ValueError):
            d.Model([LayerSpec("relu")])

    def test_state_dict_round_trip(self):
        m1 = d.Model(d.convnet3(3, 5, width=4), seed=3)
        rng = np.random.default_rng(5)
        for bn in m1.bn_layers():
            bn.running_mean = rng.normal(size=bn.running_mean.shape).astype(np.float32)
            bn.running_var = rng.uniform(0.5, 2.0, size=bn.running_var.shape).astype(np.float32)
        m2 = d.Model(d.convnet3(3, 5, width=4), seed=99)
        m2.load_state_dict(m1.state_dict())
        x = d.Tensor(rng.normal(size=(2, 3, 8, 8)))
        assert np.array_equal(m1.forward(x, "eval").logits.data,
                              m2.forward(x, "eval").logits.data)

    def test_clone_is_independent(self):
        m1 = d.Model(d.convnet3(1, 3, width=4), seed=0)
        m2 = m1.clone()
        m2.parameters()[0][1].data += 1.0
        assert not np.array_equal(m1.parameters()[0][1].data,
                                  m2.parameters()[0][1].data)
