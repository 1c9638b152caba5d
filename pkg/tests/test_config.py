"""Config parsing, validation messages, and round-trip identity."""

import pytest

from e2d.config import ConfigError, parse_config, parse_config_text

MINIMAL = """
[dataset]
kind = mnist
train_images = ti
train_labels = tl
test_images = si
test_labels = sl
mean = 0.18
std = 0.33
"""


class TestParsing:
    def test_minimal_fills_defaults(self):
        cfg = parse_config_text(MINIMAL)
        assert cfg.recover.iterations == 200
        assert cfg.recover.epsilon == 0.5
        assert cfg.recover.alpha_bn == 0.1
        assert cfg.recover.beta1 == 0.5 and cfg.recover.beta2 == 0.9
        assert cfg.eval.ema_rate == 0.99
        assert cfg.eval.zeta == 2.0
        assert cfg.teacher.width == 16
        tree = cfg.as_tree()
        assert tree["recover"]["k_fraction"] == "0.7"
        assert tree["eval"]["loss"] == "kl"

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match="recover.kk"):
            parse_config_text(MINIMAL + "\n[recover]\nkk = 3\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config_text(MINIMAL + "\n[distill]\nx = 1\n")

    def test_k_must_be_below_iterations(self):
        bad = MINIMAL + "\n[recover]\niterations = 100\nk = 100\n"
        with pytest.raises(ConfigError) as e:
            parse_config_text(bad)
        msg = str(e.value)
        assert "recover.k" in msg and "iterations" in msg

    def test_negative_epsilon_rejected(self):
        with pytest.raises(ConfigError, match="epsilon"):
            parse_config_text(MINIMAL + "\n[recover]\nepsilon = -1\n")

    def test_bn_needs_batches_of_two(self):
        cfg_text = MINIMAL + "\n[recover]\nbatch = 1\nalpha_bn = 0.1\n"
        with pytest.raises(ConfigError, match="BN alignment"):
            parse_config_text(cfg_text)

    def test_channel_count_must_match_kind(self):
        bad = MINIMAL.replace("mean = 0.18", "mean = 0.5,0.5,0.5")
        with pytest.raises(ConfigError, match="channel"):
            parse_config_text(bad)

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "nope.cfg")

    def test_flip_prob_defaults_by_kind(self):
        assert parse_config_text(MINIMAL).eval.flip_prob == 0.0
        cifar = """
[dataset]
kind = cifar10
train_files = a.bin
test_files = b.bin
mean = 0.5,0.5,0.5
std = 0.25,0.25,0.25
"""
        assert parse_config_text(cifar).eval.flip_prob == 0.5
        explicit = cifar + "\n[eval]\nflip_prob = 0.1\n"
        assert parse_config_text(explicit).eval.flip_prob == 0.1


class TestRoundTrip:
    def test_parse_serialize_parse_identical(self):
        text = MINIMAL + """
[teacher]
width = 12
epochs = 7

[recover]
iterations = 120
k_fraction = 0.6
variant = alternating

[eval]
loss = mse-gt-plus-ce
ce_weight = 0.025

[metrics]
stride = 11
"""
        cfg1 = parse_config_text(text)
        cfg2 = parse_config_text(cfg1.serialize())
        assert cfg1.as_tree() == cfg2.as_tree()
        assert cfg2.recover.variant == "alternating"
        assert cfg2.metrics.stride == 11
