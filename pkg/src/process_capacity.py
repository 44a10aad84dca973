"""
Capacity sweep: PVE models with rank-limited transitions, trained on
policy-iteration-derived datasets with stochastic or deterministic noise.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.cells import run_cells
from src.config import FLOAT_FORMAT, ExperimentConfig
from src.environments import environment_for
from src.exceptions import PveLabError
from src.file_formats import (
    prepare_output_dir,
    read_dataset_file,
    write_csv,
    write_dataset_file,
    write_manifest,
    write_model_file,
)
from src.mdp_core import TabularMdp, policy_evaluation, policy_iteration
from src.model_learning import TrainConfig, realize_model, train
from src.policy_gen import DatasetSpec, build_dataset
from src.seeding import derive_seed

logger = logging.getLogger(__name__)

FAMILY_LABELS = {
    "pi-derived-stochastic": "stochastic",
    "pi-derived-deterministic": "deterministic",
}


@dataclass(frozen=True)
class CapacityCell:
    rank: int | str
    family: str
    seed_index: int
    env: TabularMdp
    dataset_file: Path
    train_config: TrainConfig


def _run_cell(cell: CapacityCell) -> tuple[dict, TabularMdp]:
    dataset = read_dataset_file(cell.dataset_file)
    model = realize_model(train(cell.env, cell.train_config, dataset).final_params)
    _, model_policy = policy_iteration(model)
    value = float(np.mean(policy_evaluation(cell.env, model_policy)))
    logger.info(
        "rank %s, %s, seed %d: opt value %.4f", cell.rank, cell.family, cell.seed_index, value
    )
    row = {
        "rank": cell.rank,
        "family": FAMILY_LABELS[cell.family],
        "seed": cell.seed_index,
        "opt_value_mean": value,
    }
    return row, model


def write_capacity_datasets(
    config: ExperimentConfig, env: TabularMdp, dataset_dir: Path
) -> dict[tuple[str, int], Path]:
    """One dataset per (family, seed), shared by every rank."""
    dataset_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for family in config.families:
        for seed_index in range(config.seed_count):
            spec = DatasetSpec(
                count=config.dataset_count,
                kind=family,
                noise_fraction=config.noise_fraction,
                augment_per_policy=config.augment_per_policy,
                seed=derive_seed(config.seed, f"capacity-dataset-{family}", seed_index),
            )
            path = dataset_dir / f"{FAMILY_LABELS[family]}-seed{seed_index}.dataset"
            files[family, seed_index] = write_dataset_file(path, build_dataset(env, spec))
    return files


def _cells(
    config: ExperimentConfig, env: TabularMdp, dataset_files: dict[tuple[str, int], Path]
) -> list[CapacityCell]:
    cells = []
    for rank in config.rank_list:
        for family in config.families:
            for seed_index in range(config.seed_count):
                train_config = TrainConfig(
                    loss="pve",
                    k=config.pve_k,
                    rank=rank,
                    iterations=config.iterations,
                    learning_rate=config.learning_rate,
                    batch_size=config.batch_size,
                    snapshot_every=max(config.iterations, 1),
                    seed=derive_seed(config.seed, f"capacity-model-{rank}-{family}", seed_index),
                    beta1=config.beta1,
                    beta2=config.beta2,
                    eps=config.adam_eps,
                )
                cells.append(CapacityCell(
                    rank, family, seed_index, env, dataset_files[family, seed_index], train_config
                ))
    return cells


def run_capacity_sweep(
    config: ExperimentConfig, out_dir: Path
) -> tuple[pd.DataFrame, list[TabularMdp], list[Path]]:
    """Train every (rank, family, seed) cell.

    Returns:
        (results table with the environment optimum attached, final models in row order,
        dataset files written under ``out_dir/datasets``)
    """
    env = environment_for(config)
    env_optimal_values, _ = policy_iteration(env)
    dataset_files = write_capacity_datasets(config, env, out_dir / "datasets")
    cells = _cells(config, env, dataset_files)
    print(f"\nTraining {len(cells)} capacity-limited PVE models")
    outcomes = run_cells(_run_cell, cells, config.workers)

    df = pd.DataFrame([row for row, _ in outcomes])
    df["env_opt_value"] = float(np.mean(env_optimal_values))
    return df, [model for _, model in outcomes], list(dataset_files.values())


def summarize_capacity(df: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard error of the optimal-policy value over seeds, per (rank, family)."""
    summary = (
        df.groupby(["rank", "family"], sort=False)
        .agg(
            opt_value_mean=("opt_value_mean", "mean"),
            opt_value_se=("opt_value_mean", "sem"),
            seeds=("seed", "count"),
            env_opt_value=("env_opt_value", "first"),
        )
        .reset_index()
    )
    summary["opt_value_se"] = summary["opt_value_se"].fillna(0.0)
    return summary


def save_capacity(
    df: pd.DataFrame, models: list[TabularMdp], out_dir: Path
) -> list[Path]:
    files = [write_csv(out_dir / "capacity.csv", df, "capacity")]
    summary_file = out_dir / "capacity_summary.csv"
    summarize_capacity(df).to_csv(summary_file, index=False, float_format=FLOAT_FORMAT)
    files.append(summary_file)

    model_dir = out_dir / "models"
    model_dir.mkdir(exist_ok=True)
    for row, model in zip(df.to_dict("records"), models):
        name = f"rank{row['rank']}-{row['family']}-seed{row['seed']}.model"
        files.append(write_model_file(model_dir / name, model, row["rank"]))

    print(f"CSV file created: {files[0]}")
    print(f"CSV file created: {summary_file}")
    print(f"Model files: {len(models)} in {model_dir}")
    return files


def main(config: ExperimentConfig, force: bool = False) -> int:
    try:
        print("\npve-lab - Capacity Sweep")
        print(f"Ranks: {config.rank_list}  Families: {config.families}  Seeds: {config.seed_count}")

        out_dir = prepare_output_dir(config, force)
        df, models, dataset_files = run_capacity_sweep(config, out_dir)
        files = dataset_files + save_capacity(df, models, out_dir)
        print(f"Dataset files: {len(dataset_files)} in {out_dir / 'datasets'}")
        write_manifest(out_dir, config, files)

        print("\nSUMMARY")
        print(f"Environment optimum (mean state value): {df['env_opt_value'].iloc[0]:.4f}")
        for row in summarize_capacity(df).itertuples():
            print(f"  rank {row.rank:>4} {row.family:<13} {row.opt_value_mean:.4f} "
                  f"+/- {row.opt_value_se:.4f}")
        print(f"\nOutputs in {out_dir}")
        print("\nNext steps:")
        print(f"  pve-lab trajectories --model-file {out_dir / 'models'}/<file>.model")
        return 0

    except PveLabError as e:
        print(f"\nError: {e}")
        return 1
    except Exception as e:
        print(f"\nFatal error: {str(e)}")
        import traceback
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    from src.config import load_experiment_config

    sys.exit(main(load_experiment_config(None, "capacity_sweep")))
