"""Config parsing, validation, defaults display."""

import pytest

from phraseground.config import RunConfig, config_from_dict, load_config, parse_config_text
from phraseground.errors import ConfigError


class TestParsing:
    def test_key_value_parsing_with_comments(self):
        cfg = parse_config_text("""
        # comment line
        image_h = 64
        channels = 16   # trailing comment
        dropout = 0.2
        ffn_residual = true
        refine_sharing = encoder
        """)
        assert cfg.image_h == 64
        assert cfg.channels == 16
        assert cfg.dropout == 0.2
        assert cfg.ffn_residual is True
        assert cfg.refine_sharing == "encoder"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config_text("no_such_key = 1")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            parse_config_text("epochs = many")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="expected"):
            parse_config_text("just some words")

    def test_load_config_overrides(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = 5\n")
        cfg = load_config(p, {"seed": 9})
        assert cfg.seed == 9


class TestValidation:
    def test_image_must_be_multiple_of_32(self):
        with pytest.raises(ConfigError):
            RunConfig(image_h=48).validate()

    def test_channels_divisible_by_heads(self):
        with pytest.raises(ConfigError):
            RunConfig(channels=12, heads=5).validate()

    def test_channels_divisible_by_four(self):
        with pytest.raises(ConfigError):
            RunConfig(channels=10, heads=2).validate()

    def test_top_k_bounded_by_benchmark_cells(self):
        with pytest.raises(ConfigError):
            RunConfig(image_h=32, image_w=32, top_k=17).validate()

    def test_encoder_sharing_requires_encoder(self):
        with pytest.raises(ConfigError):
            RunConfig(refine_sharing="encoder", encoder_layers=0).validate()

    def test_object_count_ordering(self):
        with pytest.raises(ConfigError):
            RunConfig(min_objects=4, max_objects=2).validate()

    def test_defaults_are_valid(self):
        RunConfig().validate()


class TestDefaults:
    def test_loss_and_inference_defaults(self):
        cfg = RunConfig()
        assert cfg.lambda_bce == 1.0
        assert cfg.lambda_dice == 1.0
        assert cfg.threshold == 0.5
        assert cfg.learning_rate == 1e-4

    def test_default_capacity_settings(self):
        cfg = RunConfig()
        assert cfg.top_k == 50
        assert cfg.rounds == 3
        assert cfg.encoder_layers == 2

    def test_show_renders_sorted_key_value_lines(self):
        text = RunConfig().show()
        lines = text.splitlines()
        keys = [ln.split(" = ")[0] for ln in lines]
        assert keys == sorted(keys)
        assert "lambda_bce = 1.0" in lines
        assert "threshold = 0.5" in lines
        assert "learning_rate = 0.0001" in lines
        assert "ffn_residual = false" in lines

    def test_dict_roundtrip(self):
        cfg = RunConfig(channels=16, heads=4)
        assert config_from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
