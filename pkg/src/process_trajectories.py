"""
Trajectories: roll out the environment-optimal policy in the environment and
in a learned model from the same start cell, and count grid-illegal moves.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from src.analysis import count_non_adjacent_transitions, sample_trajectories
from src.config import ExperimentConfig
from src.environments import environment_for, four_rooms_layout
from src.exceptions import FileFormatError, PveLabError, ShapeError
from src.file_formats import prepare_output_dir, read_model_file, write_csv, write_manifest
from src.mdp_core import TabularMdp, policy_iteration
from src.seeding import derive_seed

logger = logging.getLogger(__name__)


def load_model(config: ExperimentConfig, env: TabularMdp) -> TabularMdp:
    """The model named by ``config.model_file``, or the environment itself when none is given."""
    if not config.model_file:
        logger.info("no model file given; sampling the environment twice")
        return env
    path = Path(config.model_file)
    if not path.exists():
        raise FileFormatError(f"model file not found: {path}")
    model, rank = read_model_file(path)
    if (model.n_states, model.n_actions) != (env.n_states, env.n_actions):
        raise ShapeError(
            f"model has {model.n_states} states x {model.n_actions} actions, "
            f"environment has {env.n_states} x {env.n_actions}"
        )
    logger.info("loaded rank-%s model from %s", rank, path)
    return model


def trajectory_table(trajectories: np.ndarray) -> pd.DataFrame:
    """Long format: one row per (trajectory, time step)."""
    n_traj, length = trajectories.shape
    return pd.DataFrame({
        "traj_id": np.repeat(np.arange(n_traj), length),
        "t": np.tile(np.arange(length), n_traj),
        "state": trajectories.ravel(),
    })


def run_trajectories(config: ExperimentConfig) -> dict:
    env = environment_for(config)
    model = load_model(config, env)
    _, policy = policy_iteration(env)

    four_rooms = config.environment == "four_rooms"
    layout = four_rooms_layout() if four_rooms else None
    start = layout.corner_state(config.start_cell) if layout else 0

    results = {}
    for source, mdp in (("env", env), ("model", model)):
        trajectories = sample_trajectories(
            mdp,
            policy,
            config.n_trajectories,
            config.horizon,
            start,
            derive_seed(config.seed, f"trajectories-{source}"),
        )
        non_adjacent = count_non_adjacent_transitions(trajectories, layout) if layout else 0
        results[source] = {"trajectories": trajectories, "non_adjacent": non_adjacent}
        logger.info("%s: %d non-adjacent transitions", source, non_adjacent)
    return results


def save_trajectories(results: dict, out_dir: Path) -> list[Path]:
    files = []
    for source, result in results.items():
        path = write_csv(
            out_dir / f"trajectories_{source}.csv",
            trajectory_table(result["trajectories"]),
            "trajectories",
        )
        print(f"CSV file created: {path}")
        files.append(path)
    return files


def main(config: ExperimentConfig, force: bool = False) -> int:
    try:
        print("\npve-lab - Trajectories")
        print(f"Model: {config.model_file or 'environment'}  Start: {config.start_cell}")
        print(f"Trajectories: {config.n_trajectories} x {config.horizon} steps")

        out_dir = prepare_output_dir(config, force)
        results = run_trajectories(config)
        files = save_trajectories(results, out_dir)

        notes = [
            f"{source}: {result['non_adjacent']} non-adjacent transitions"
            for source, result in results.items()
        ]
        write_manifest(out_dir, config, files, notes)

        print("\nSUMMARY")
        for note in notes:
            print(f"  {note}")
        print(f"\nOutputs in {out_dir}")
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

    sys.exit(main(load_experiment_config(None, "trajectories")))
