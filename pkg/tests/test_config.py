"""Config schema: parsing, validation, hashing, presets."""

import dataclasses

import pytest
import yaml

from gandetect.config import (
    config_from_dict,
    config_hash,
    load_config,
    load_preset,
    preset_names,
    with_overrides,
)
from gandetect.errors import CapabilityError, FormatError, ValidationError


def base_dict(**overrides):
    raw = {
        "name": "unit",
        "seed": 3,
        "output_dir": "runs/unit",
        "dataset": {"synthesize": {"train": 100, "test": 40}},
        "classifier": {"epochs": 1},
        "acgan": {"layers": [0, 3], "unconditional_layers": [0], "epochs": 1},
        "attacks": [
            {"name": "fgsm", "kind": "fgsm", "mode": "low"},
            {"name": "cw-high", "kind": "cw-l2", "mode": "high", "limit": 10},
        ],
        "detector": {"layers": [0, 3], "methods": ["d-ad", "g-ad", "all-ad"],
                     "g_ad_layers": [0]},
        "evaluate": {},
        "robust_classify": {"layer": 0, "attacks": ["cw-high"]},
        "visualize": {"layers": [3], "attack": "cw-high"},
    }
    raw.update(overrides)
    return raw


class TestParsing:
    def test_round_trip_via_yaml_file(self, tmp_path):
        path = tmp_path / "exp.yaml"
        path.write_text(yaml.safe_dump(base_dict()))
        cfg = load_config(path)
        assert cfg.name == "unit"
        assert cfg.acgan.layers == (0, 3)
        assert cfg.attack("cw-high").kappa == 14.0  # library default preserved

    def test_defaults_fill_in(self):
        cfg = config_from_dict(base_dict())
        assert cfg.detector.target_fpr == 0.05
        assert cfg.detector.budget.restarts == 8
        assert cfg.evaluate.fpr_max == 0.2

    def test_tap_names_resolve(self):
        raw = base_dict()
        raw["acgan"]["layers"] = ["input", "penultimate"]
        raw["detector"]["layers"] = ["input"]
        raw["detector"]["g_ad_layers"] = []
        raw["visualize"] = {"layers": [], "attack": None}
        cfg = config_from_dict(raw)
        assert cfg.acgan.layers == (0, 3)

    def test_unknown_key_rejected(self):
        raw = base_dict()
        raw["detector"]["budgie"] = 1
        with pytest.raises(ValidationError, match="budgie"):
            config_from_dict(raw)

    def test_unknown_tap_rejected(self):
        raw = base_dict()
        raw["acgan"]["layers"] = ["warmest"]
        with pytest.raises(ValidationError, match="warmest"):
            config_from_dict(raw)

    def test_bad_yaml_is_format_error(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("a: [unclosed")
        with pytest.raises(FormatError):
            load_config(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_config(tmp_path / "nope.yaml")

    def test_attack_blocks_validated_via_attack_module(self):
        raw = base_dict()
        raw["attacks"][0]["kind"] = "jsma"
        with pytest.raises(ValidationError, match="jsma"):
            config_from_dict(raw)


class TestCrossValidation:
    def test_detector_layer_without_model_rejected(self):
        raw = base_dict()
        raw["detector"]["layers"] = [0, 2]
        with pytest.raises(ValidationError, match="tap 2"):
            config_from_dict(raw)

    def test_unconditional_only_layer_with_d_ad_is_capability_error(self):
        raw = base_dict()
        raw["acgan"]["layers"] = [0]
        raw["acgan"]["unconditional_layers"] = [0, 3]
        with pytest.raises(CapabilityError, match="class posterior"):
            config_from_dict(raw)

    def test_duplicate_attack_names_rejected(self):
        raw = base_dict()
        raw["attacks"].append(dict(raw["attacks"][0]))
        with pytest.raises(ValidationError, match="duplicate"):
            config_from_dict(raw)

    def test_reserved_attack_name_rejected(self):
        raw = base_dict()
        raw["attacks"][0]["name"] = "clean"
        with pytest.raises(ValidationError, match="reserved"):
            config_from_dict(raw)

    def test_rc_layer_needs_conditional_model(self):
        raw = base_dict()
        raw["robust_classify"]["layer"] = 1
        with pytest.raises(CapabilityError, match="robust"):
            config_from_dict(raw)

    def test_rc_unknown_attack_rejected(self):
        raw = base_dict()
        raw["robust_classify"]["attacks"] = ["unknown"]
        with pytest.raises(ValidationError, match="unknown"):
            config_from_dict(raw)

    def test_visualize_layer_needs_model(self):
        raw = base_dict()
        raw["visualize"]["layers"] = [1]
        with pytest.raises(ValidationError, match="visualize"):
            config_from_dict(raw)

    def test_visualize_same_classes_rejected(self):
        raw = base_dict()
        raw["visualize"]["source_class"] = raw["visualize"]["target_class"] = 2
        with pytest.raises(ValidationError, match="differ"):
            config_from_dict(raw)

    def test_generator_statistic_needs_full_g_ad_coverage(self):
        raw = base_dict()
        raw["detector"]["include_generator_statistic"] = True
        with pytest.raises(ValidationError, match="g_ad_layers"):
            config_from_dict(raw)

    def test_g_ad_layers_must_be_subset(self):
        raw = base_dict()
        raw["detector"]["g_ad_layers"] = [1]
        with pytest.raises(ValidationError, match="subset"):
            config_from_dict(raw)


class TestHashAndOverrides:
    def test_hash_ignores_output_dir(self):
        a = config_from_dict(base_dict())
        b = with_overrides(a, output_dir="/somewhere/else")
        assert config_hash(a) == config_hash(b)

    def test_hash_sensitive_to_hyperparameters(self):
        a = config_from_dict(base_dict())
        raw = base_dict()
        raw["classifier"]["epochs"] = 2
        b = config_from_dict(raw)
        assert config_hash(a) != config_hash(b)

    def test_hash_sensitive_to_seed(self):
        a = config_from_dict(base_dict())
        assert config_hash(a) != config_hash(with_overrides(a, seed=99))

    def test_seed_override(self):
        cfg = with_overrides(config_from_dict(base_dict()), seed=42)
        assert cfg.seed == 42

    def test_attack_lookup(self):
        cfg = config_from_dict(base_dict())
        assert cfg.attack("fgsm").kind == "fgsm"
        with pytest.raises(ValidationError):
            cfg.attack("nope")


class TestPresets:
    def test_both_presets_ship(self):
        assert set(preset_names()) >= {"mnist-desk", "cifar10-desk"}

    @pytest.mark.parametrize("name", ["mnist-desk", "cifar10-desk"])
    def test_presets_parse_and_validate(self, name):
        cfg = load_preset(name)
        assert cfg.name == name
        assert cfg.dataset.synthesize is not None
        assert 0 in cfg.detector.layers and 3 in cfg.detector.layers
        assert set(cfg.detector.methods) == {"d-ad", "g-ad", "all-ad"}

    def test_unknown_preset_rejected(self):
        with pytest.raises(ValidationError, match="mnist-desk"):
            load_preset("imagenet-rack")

    def test_frozen_config(self):
        cfg = load_preset("mnist-desk")
        with pytest.raises(dataclasses.FrozenInstanceError):
            cfg.seed = 1
