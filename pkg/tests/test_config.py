import json
import logging

import pytest
from pydantic import ValidationError

from app import config
from app.config import (SamplerConfig, Settings, SynthConfig, TrainConfig, desk_schedule, load_json_config,
                        override, resolve_log_level)


class TestTrainConfig:
    """Class defaults are the full-scale schedule; desk_schedule shrinks it."""

    def test_full_scale_defaults(self):
        config = TrainConfig()
        assert (config.epochs, config.batch_size, config.base_lr) == (17, 1024, 0.01)
        assert (config.lr_decay_factor, config.lr_decay_every) == (0.1, 5)
        assert config.loss_mode == "squared"

    def test_desk_schedule(self):
        config = desk_schedule(epochs=12, batch_size=16, seed=3)
        assert config.lr_decay_every == 4
        assert config.seed == 3

    def test_short_desk_schedule_still_decays(self):
        assert desk_schedule(epochs=2).lr_decay_every == 1

    def test_frozen(self):
        with pytest.raises(ValidationError):
            TrainConfig().epochs = 3

    def test_unknown_loss_mode(self):
        with pytest.raises(ValidationError):
            TrainConfig(loss_mode="huber")


class TestSections:

    def test_sampler_defaults(self):
        config = SamplerConfig()
        assert (config.num_bins, config.low_fraction, config.high_fraction) == (100, 0.10, 0.05)
        assert config.target_budget is None

    def test_synth_rejects_unknown_kind(self):
        with pytest.raises(ValidationError):
            SynthConfig(kinds=["gaussian_blur", "motion_blur"])

    def test_synth_rejects_severity_out_of_range(self):
        with pytest.raises(ValidationError):
            SynthConfig(severities=[0.0, 1.5])


class TestSettings:

    def test_env_prefix(self, monkeypatch):
        monkeypatch.setenv("FQA_SEED", "41")
        assert Settings().seed == 41

    def test_jobs_from_test_environment(self):
        assert Settings().jobs == 1

    def test_full_and_desk_schedules_differ(self):
        settings = Settings()
        assert settings.full_training.batch_size == 1024
        assert settings.quality_training.batch_size == 64

    @pytest.mark.parametrize("value,level", [("debug", logging.DEBUG), ("WARNING", logging.WARNING),
                                             ("10", 10), (30, 30), (None, logging.INFO), ("", logging.INFO)])
    def test_resolve_log_level(self, value, level):
        assert resolve_log_level(value) == level

    def test_unknown_log_level(self):
        with pytest.raises(ValueError, match="unknown log level"):
            resolve_log_level("chatty")

    def test_settings_validate_log_level(self):
        assert Settings(log_level="error").log_level == logging.ERROR


class TestYamlLoading:
    """config.yaml placeholders expand from the environment."""

    def test_placeholder_with_default(self, monkeypatch):
        monkeypatch.delenv("FQA_TEST_VALUE", raising=False)
        assert config._expand_placeholders("x: ${FQA_TEST_VALUE:-7}") == "x: 7"

    def test_placeholder_from_env(self, monkeypatch):
        monkeypatch.setenv("FQA_TEST_VALUE", "9")
        assert config._expand_placeholders("x: ${FQA_TEST_VALUE:-7}") == "x: 9"

    def test_placeholder_without_default_is_empty(self, monkeypatch):
        monkeypatch.delenv("FQA_TEST_VALUE", raising=False)
        assert config._expand_placeholders("x: '${FQA_TEST_VALUE}'") == "x: ''"

    def test_yaml_defaults(self, tmp_path, monkeypatch):
        path = tmp_path / "config.yaml"
        path.write_text("seed: ${FQA_TEST_SEED:-5}\nsampler:\n  num_bins: 20\n")
        monkeypatch.setattr(config, "CONFIG_YAML", path)
        settings = Settings(**config._yaml_defaults())
        assert settings.seed == 5
        assert settings.sampler.num_bins == 20
        assert settings.sampler.high_fraction == 0.05

    def test_missing_yaml(self, tmp_path, monkeypatch):
        monkeypatch.setattr(config, "CONFIG_YAML", tmp_path / "absent.yaml")
        assert config._yaml_defaults() == {}


class TestOverrides:
    """--config JSON and flags layered over a section."""

    def test_layers_apply_in_order_and_skip_none(self):
        merged = override(desk_schedule(), {"epochs": 5, "seed": 2}, {"epochs": 3, "seed": None})
        assert merged.epochs == 3
        assert merged.seed == 2

    def test_override_revalidates(self):
        with pytest.raises(ValidationError):
            override(SamplerConfig(), {"low_fraction": 0.7, "high_fraction": 0.5})

    def test_load_json_config(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"sampler": {"num_bins": 10}}))
        assert load_json_config(path) == {"sampler": {"num_bins": 10}}
        assert load_json_config(None) == {}

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json")
        with pytest.raises(ValueError, match="not valid JSON"):
            load_json_config(path)

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("[1, 2]")
        with pytest.raises(ValueError, match="JSON object"):
            load_json_config(path)
