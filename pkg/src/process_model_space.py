"""
Model-space experiment: train a population of models per k, project every
snapshot's population onto two principal components and track its diameter.
"""

from __future__ import annotations

import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.analysis import (
    devectorize_model,
    diameter,
    grouped_diameters,
    optimal_value_ratio,
    pca_project,
    spearman_correlation,
    vectorize_model,
)
from src.cells import run_cells
from src.config import ExperimentConfig, format_k
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
from src.mdp_core import TabularMdp, policy_iteration
from src.model_learning import TrainConfig, realize_model, train
from src.policy_gen import DatasetSpec, build_dataset
from src.seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelSpaceCell:
    k_label: str
    model_id: int
    env: TabularMdp
    dataset_file: Path
    train_config: TrainConfig
    env_optimal_values: np.ndarray


@dataclass
class CellResult:
    snapshots: list[int]
    vectors: np.ndarray
    losses: list[float]
    ratios: list[float]


@dataclass
class ModelSpaceRun:
    tables: dict[str, pd.DataFrame]
    models: dict[str, list[tuple[int, TabularMdp]]]
    dataset_files: list[Path]


def class_order(k: float) -> float:
    """Sort key placing the PVE class after every finite k."""
    return math.inf if math.isinf(k) else float(k)


def _train_cell(cell: ModelSpaceCell) -> CellResult:
    dataset = read_dataset_file(cell.dataset_file)
    run = train(cell.env, cell.train_config, dataset)
    window = cell.train_config.snapshot_every
    snapshots, vectors, losses, ratios = [], [], [], []
    for iteration, params in run.snapshots:
        model = realize_model(params)
        snapshots.append(iteration)
        vectors.append(vectorize_model(model).entries)
        if iteration == 0:
            losses.append(float(run.losses[0]) if len(run.losses) else float("nan"))
        else:
            losses.append(float(np.mean(run.losses[max(0, iteration - window) : iteration])))
        ratios.append(optimal_value_ratio(cell.env, model, cell.env_optimal_values))
    logger.info("model %s/%d done: final loss %.3e", cell.k_label, cell.model_id, run.final_loss)
    return CellResult(snapshots, np.stack(vectors), losses, ratios)


def _write_datasets(
    config: ExperimentConfig, env: TabularMdp, k_index: int, k_label: str, loss: str,
    dataset_dir: Path,
) -> list[Path]:
    """Build and write the datasets one k class trains on; one per model when resampling."""
    n_datasets = config.model_count if config.resample_dataset_per_model else 1
    files = []
    for dataset_index in range(n_datasets):
        spec = DatasetSpec(
            count=config.dataset_count,
            kind=config.dataset_kind,
            noise_fraction=config.noise_fraction,
            augment_per_policy=config.augment_per_policy,
            seed=derive_seed(config.seed, f"dataset-k{k_index}", dataset_index),
            label_values=(loss == "pve"),
        )
        path = dataset_dir / f"k{k_label}-d{dataset_index}.dataset"
        files.append(write_dataset_file(path, build_dataset(env, spec)))
    return files


def _cells_for_k(
    config: ExperimentConfig, env: TabularMdp, env_optimal_values, k_index: int, k: float,
    dataset_files: list[Path],
) -> list[ModelSpaceCell]:
    pve_class = math.isinf(k)
    cells = []
    for model_id in range(config.model_count):
        train_config = TrainConfig(
            loss="pve" if pve_class else config.loss,
            k=config.pve_k if pve_class else int(k),
            rank=config.rank_list[0],
            iterations=config.iterations,
            learning_rate=config.learning_rate,
            batch_size=config.batch_size,
            snapshot_every=config.snapshot_every,
            seed=derive_seed(config.seed, f"model-k{k_index}", model_id),
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.adam_eps,
        )
        dataset_file = dataset_files[model_id % len(dataset_files)]
        cells.append(ModelSpaceCell(
            format_k(k), model_id, env, dataset_file, train_config, env_optimal_values
        ))
    return cells


def _kept_snapshots(config: ExperimentConfig, snapshots: list[int]) -> list[int]:
    if config.snapshot_files == "all":
        return list(range(len(snapshots)))
    if config.snapshot_files == "final":
        return [len(snapshots) - 1]
    return []


def run_model_space(config: ExperimentConfig, out_dir: Path) -> ModelSpaceRun:
    """Train, project and measure every population.

    Datasets are written under ``out_dir/datasets`` before training and every
    cell trains on the file it is given.

    Returns:
        ModelSpaceRun with tables keyed 'points', 'diameters' and 'diameter_groups',
        the snapshot models selected by ``config.snapshot_files`` and the dataset files
    """
    env = environment_for(config)
    env_optimal_values, _ = policy_iteration(env)
    dataset_dir = out_dir / "datasets"
    dataset_dir.mkdir(parents=True, exist_ok=True)
    points, diameters, groups = [], [], []
    models: dict[str, list[tuple[int, TabularMdp]]] = {}
    all_dataset_files: list[Path] = []

    for k_index, k in enumerate(config.k_list):
        k_label = format_k(k)
        loss = "pve" if math.isinf(k) else config.loss
        dataset_files = _write_datasets(config, env, k_index, k_label, loss, dataset_dir)
        all_dataset_files += dataset_files
        print(f"\nk = {k_label}: training {config.model_count} models")
        results = run_cells(
            _train_cell,
            _cells_for_k(config, env, env_optimal_values, k_index, k, dataset_files),
            config.workers,
        )
        for snap_index, snapshot in enumerate(results[0].snapshots):
            raw = np.stack([r.vectors[snap_index] for r in results])
            projected = (
                pca_project(raw) if len(results) >= 2 else np.zeros((len(results), 2))
            )
            for model_id, (r, (pc1, pc2)) in enumerate(zip(results, projected)):
                points.append({
                    "run_id": f"k{k_label}-m{model_id}",
                    "k": k_label,
                    "snapshot": snapshot,
                    "model_id": model_id,
                    "pc1": pc1,
                    "pc2": pc2,
                    "loss": r.losses[snap_index],
                    "opt_value_ratio": r.ratios[snap_index],
                })
            diameters.append({
                "k": k_label,
                "snapshot": snapshot,
                "diameter_2d": diameter(projected),
                "diameter_raw": diameter(raw),
            })
        group_rng = derive_rng(config.seed, "diameter-groups", k_index)
        for group, value in enumerate(
            grouped_diameters(projected, config.diameter_group_size, group_rng)
        ):
            groups.append({"k": k_label, "group": group, "diameter_2d": value})

        for model_id, r in enumerate(results):
            models[f"k{k_label}-m{model_id}"] = [
                (
                    r.snapshots[i],
                    devectorize_model(r.vectors[i], env.n_states, env.n_actions, env.discount),
                )
                for i in _kept_snapshots(config, r.snapshots)
            ]

    tables = {
        "points": pd.DataFrame(points),
        "diameters": pd.DataFrame(diameters),
        "diameter_groups": pd.DataFrame(groups, columns=["k", "group", "diameter_2d"]),
    }
    return ModelSpaceRun(tables, models, all_dataset_files)


def final_diameter_trend(config: ExperimentConfig, diameters: pd.DataFrame) -> float:
    """Spearman correlation between class order and final-snapshot 2-d diameter."""
    final = diameters[diameters["snapshot"] == diameters["snapshot"].max()]
    order = {format_k(k): class_order(k) for k in config.k_list}
    ranks = [order[k] for k in final["k"]]
    return spearman_correlation(ranks, final["diameter_2d"].tolist())


def save_model_space(
    result: ModelSpaceRun, out_dir: Path, rank: int | str = "full"
) -> list[Path]:
    files = [
        write_csv(out_dir / f"{name}.csv", result.tables[name], name)
        for name in ("points", "diameters", "diameter_groups")
    ]
    for f in files:
        print(f"CSV file created: {f}")

    model_dir = out_dir / "models"
    model_dir.mkdir(exist_ok=True)
    n_models = 0
    for run_id, snapshots in result.models.items():
        for snapshot, model in snapshots:
            files.append(write_model_file(model_dir / f"{run_id}-s{snapshot}.model", model, rank))
            n_models += 1
    print(f"Model files: {n_models} in {model_dir}")
    print(f"Dataset files: {len(result.dataset_files)} in {out_dir / 'datasets'}")
    return files


def main(config: ExperimentConfig, force: bool = False) -> int:
    try:
        print("\npve-lab - Model Space Experiment")
        print(f"Environment: {config.environment}  k: {[format_k(k) for k in config.k_list]}")
        print(f"Models per k: {config.model_count}  Iterations: {config.iterations}")

        out_dir = prepare_output_dir(config, force)
        result = run_model_space(config, out_dir)
        files = result.dataset_files + save_model_space(result, out_dir, config.rank_list[0])

        trend = final_diameter_trend(config, result.tables["diameters"])
        notes = [
            f"diameter error bars use random groups of {config.diameter_group_size} "
            f"final-snapshot points per k",
            f"spearman(class order, final 2-d diameter) = {trend:.4f}",
        ]
        write_manifest(out_dir, config, files, notes)

        print("\nSUMMARY")
        print(f"Spearman correlation of diameter with k order: {trend:.3f}")
        points = result.tables["points"]
        final = points[points["snapshot"] == config.iterations]
        for k_label, group in final.groupby("k", sort=False):
            share = float(np.mean(group["opt_value_ratio"] > 0.95))
            print(f"  k={k_label}: {share:.0%} of models with opt_value_ratio > 0.95")
        print(f"\nOutputs in {out_dir}")
        print("\nNext steps:")
        print(f"  pve-lab trajectories --model-file {out_dir / 'models'}/<run>-s<snapshot>.model")
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

    sys.exit(main(load_experiment_config(None, "model_space")))
