"""
Tests for configuration loading, validation and run-directory hashing
"""

import math

import pytest

from src import config as config_module
from src.config import ExperimentConfig, format_k, load_experiment_config
from src.exceptions import ConfigError


def write_ini(tmp_path, text):
    path = tmp_path / "run.ini"
    path.write_text(text)
    return path


def test_defaults_are_valid():
    config = load_experiment_config(None, "model_space")
    assert config.name == "model_space"
    assert math.isinf(config.k_list[-1])


def test_ini_section_is_parsed(tmp_path):
    path = write_ini(tmp_path, """
[model_space]
k_list = 1, 30, inf
rank_list = full, 20
slip = 0.1
resample_dataset_per_model = yes
families = pi-derived-stochastic
""")
    config = load_experiment_config(path, "model_space")
    assert config.k_list[:2] == [1, 30] and math.isinf(config.k_list[2])
    assert config.rank_list == ["full", 20]
    assert config.slip == 0.1
    assert config.resample_dataset_per_model is True
    assert config.families == ["pi-derived-stochastic"]


def test_overrides_win_and_none_is_ignored(tmp_path):
    path = write_ini(tmp_path, "[verify]\nseed = 3\ncount = 10\n")
    config = load_experiment_config(path, "verify", {"seed": 9, "count": None})
    assert config.seed == 9
    assert config.count == 10


def test_unknown_key(tmp_path):
    path = write_ini(tmp_path, "[verify]\ncolour = blue\n")
    with pytest.raises(ConfigError) as info:
        load_experiment_config(path, "verify")
    assert "colour" in str(info.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "absent.ini", "verify")


def test_validation_lists_every_problem():
    config = ExperimentConfig(slip=2.0, discount=1.0, batch_size=0, suite="some")
    with pytest.raises(ConfigError) as info:
        config.validate()
    assert len(info.value.problems) == 4


def test_discount_range():
    ExperimentConfig(discount=0.0).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(discount=-0.1).validate()


def test_snapshot_files_choice():
    ExperimentConfig(snapshot_files="all").validate()
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(snapshot_files="some").validate()
    assert "snapshot_files" in str(info.value)


def test_hash_ignores_output_location_and_workers():
    base = ExperimentConfig()
    moved = ExperimentConfig(output_dir="/tmp/elsewhere", workers=8)
    reseeded = ExperimentConfig(seed=1)
    assert base.config_hash() == moved.config_hash()
    assert base.config_hash() != reseeded.config_hash()


def test_output_dir_uses_hash(monkeypatch, tmp_path):
    monkeypatch.setattr(config_module, "OUTPUT_PATH", tmp_path)
    config = ExperimentConfig(name="verify")
    assert config.resolve_output_dir() == tmp_path / f"verify-{config.config_hash()[:12]}"
    assert ExperimentConfig(output_dir=str(tmp_path / "x")).resolve_output_dir() == tmp_path / "x"


def test_format_k():
    assert format_k(math.inf) == "inf"
    assert format_k(5) == "5"
