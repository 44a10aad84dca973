"""
Tests for model / dataset files, CSV tables and the run manifest
"""

import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from src.config import ExperimentConfig
from src.exceptions import FileFormatError, OutputExistsError
from src.file_formats import (
    CSV_COLUMNS,
    MODEL_HEADER,
    prepare_output_dir,
    read_dataset_file,
    read_model_file,
    write_csv,
    write_dataset_file,
    write_manifest,
    write_model_file,
)
from src.model_learning import init_params, realize_model
from src.policy_gen import DatasetSpec, build_dataset
from tests.conftest import random_mdp


def test_model_file_is_exact(tmp_path):
    model = realize_model(init_params(5, 3, rank=2, rng_seed=4, discount=0.97))
    path = write_model_file(tmp_path / "m.model", model, rank=2)
    lines = path.read_text().splitlines()
    assert lines[:4] == [MODEL_HEADER, "n_states 5", "n_actions 3", "rank 2"]
    assert lines[4] == "discount 0.96999999999999997"
    loaded, rank = read_model_file(path)
    assert rank == 2
    assert loaded.allclose(model)


def test_model_file_errors(tmp_path):
    with pytest.raises(FileFormatError):
        read_model_file(tmp_path / "missing.model")
    path = write_model_file(tmp_path / "m.model", random_mdp(0))
    truncated = "\n".join(path.read_text().splitlines()[:-1])
    path.write_text(truncated)
    with pytest.raises(FileFormatError):
        read_model_file(path)
    path.write_text("# something else\n")
    with pytest.raises(FileFormatError):
        read_model_file(path)


def test_dataset_file_is_exact(tmp_path):
    env = random_mdp(1)
    dataset = build_dataset(env, DatasetSpec(count=7, seed=2, label_values=True))
    loaded = read_dataset_file(write_dataset_file(tmp_path / "d.txt", dataset))
    assert loaded.mode == "values"
    np.testing.assert_array_equal(loaded.policies, dataset.policies)
    np.testing.assert_array_equal(loaded.functions, dataset.functions)


def test_dataset_file_depends_only_on_seed(tmp_path):
    """Same spec and seed give byte-identical files; another seed does not"""
    env = random_mdp(3)
    spec = DatasetSpec(count=6, kind="pi-derived-deterministic", augment_per_policy=2, seed=5)
    first = write_dataset_file(tmp_path / "a.dataset", build_dataset(env, spec))
    second = write_dataset_file(tmp_path / "b.dataset", build_dataset(env, spec))
    other = write_dataset_file(
        tmp_path / "c.dataset", build_dataset(env, replace(spec, seed=6))
    )
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes() != other.read_bytes()


def test_csv_column_order(tmp_path):
    rows = [{"satisfied": True, "suite": "pve", "lhs": 0.1, "rhs": 0.2, "seed": 0, "case": 3}]
    path = write_csv(tmp_path / "bounds.csv", rows, "bounds")
    header = path.read_text().splitlines()[0]
    assert header == "suite,seed,case,lhs,rhs,g,a,b,satisfied"
    assert list(pd.read_csv(path).columns) == CSV_COLUMNS["bounds"]


def test_output_dir_refuses_other_config(output_root):
    first = ExperimentConfig(name="verify", output_dir=str(output_root / "run"))
    out_dir = prepare_output_dir(first)
    write_manifest(out_dir, first, [])

    assert prepare_output_dir(first) == out_dir
    second = ExperimentConfig(name="verify", seed=5, output_dir=str(output_root / "run"))
    with pytest.raises(OutputExistsError):
        prepare_output_dir(second)
    assert prepare_output_dir(second, force=True) == out_dir


def test_manifest_contents(output_root):
    config = ExperimentConfig(name="trajectories")
    out_dir = prepare_output_dir(config)
    table = write_csv(out_dir / "t.csv", [{"traj_id": 0, "t": 0, "state": 1}], "trajectories")
    manifest = json.loads(write_manifest(out_dir, config, [table], ["a note"]).read_text())
    assert manifest["config_hash"] == config.config_hash()
    assert manifest["files"] == ["t.csv"]
    assert manifest["notes"] == ["a note"]
    assert manifest["config"]["k_list"][-1] == "inf"
