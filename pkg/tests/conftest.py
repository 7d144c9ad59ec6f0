"""Shared fixtures: a miniature end-to-end pipeline run reused across files."""

import pytest
import yaml

from gandetect.config import config_from_dict


def tiny_config_dict(output_dir, seed=3):
    """A full-pipeline configuration small enough to run in seconds."""
    return {
        "name": "tiny",
        "seed": seed,
        "output_dir": str(output_dir),
        "dataset": {
            "name": "tinydigits",
            "format": "idx",
            "root": "data",
            "holdout_fraction": 0.2,
            "synthesize": {"train": 800, "test": 300},
        },
        "classifier": {"epochs": 14, "batch_size": 32, "lr": 0.001,
                       "channels": [8, 16, 16, 16], "fc_width": 32},
        "acgan": {"layers": [0, 3], "unconditional_layers": [0], "epochs": 3,
                  "batch_size": 32, "mlp_hidden": 64, "g_base_channels": 16,
                  "d_base_channels": 8},
        "attacks": [
            {"name": "fgsm", "kind": "fgsm", "mode": "low", "epsilon": 0.3},
            {"name": "cw-low", "kind": "cw-l2", "mode": "low", "kappa": 0.0,
             "outer_steps": 4, "inner_steps": 60},
        ],
        "detector": {"layers": [0, 3], "methods": ["d-ad", "g-ad", "all-ad"],
                     "g_ad_layers": [0], "target_fpr": 0.1, "clean_count": 80,
                     "gmm_components": 3,
                     "budget": {"restarts": 2, "steps": 25, "step_size": 0.05}},
        "evaluate": {"fpr_max": 0.2},
        "robust_classify": {"layer": 0, "attacks": ["cw-low"]},
        "visualize": {"layers": [3], "attack": "cw-low", "source_class": 0,
                      "target_class": 1, "count": 20},
    }


def write_config(path, raw):
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """One complete pipeline execution; returns (config, config file path)."""
    from gandetect.pipeline import run_all

    root = tmp_path_factory.mktemp("tiny-run")
    raw = tiny_config_dict(root / "out")
    cfg = config_from_dict(raw)
    run_all(cfg)
    cfg_path = write_config(root / "tiny.yaml", raw)
    return cfg, cfg_path
