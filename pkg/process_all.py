#!/usr/bin/env python3
"""
pve-lab - Complete Desk-Scale Pipeline
Verify the propositions and bounds, then run every experiment in one go
"""

import sys
from pathlib import Path

from src import process_capacity, process_model_space, process_trajectories, process_verification
from src.cli import configure_logging
from src.config import CONFIG_PATH, load_experiment_config

CONFIG_FILE = CONFIG_PATH / "desk.ini"


def main(config_file: Path = CONFIG_FILE, force: bool = False) -> int:
    """Run verify, model space, capacity sweep and trajectories in order."""
    configure_logging(quiet=True)
    print("\n" + "=" * 70)
    print("pve-lab - Complete Desk-Scale Pipeline")
    print("=" * 70 + "\n")

    steps = [
        ("Verifying propositions and bounds", "verify", process_verification.main),
        ("Model-space geometry", "model_space", process_model_space.main),
        ("Capacity sweep", "capacity_sweep", process_capacity.main),
    ]
    for number, (title, section, step_main) in enumerate(steps, start=1):
        print(f"\n\nSTEP {number}: {title}")
        print("-" * 70)
        if step_main(load_experiment_config(config_file, section), force) != 0:
            print(f"\n{title} failed. Stopping.")
            return 1

    print(f"\n\nSTEP {len(steps) + 1}: Environment vs model trajectories")
    print("-" * 70)
    capacity = load_experiment_config(config_file, "capacity_sweep")
    models = sorted((capacity.resolve_output_dir() / "models").glob("*.model"))
    overrides = {"model_file": str(models[0])} if models else None
    config = load_experiment_config(config_file, "trajectories", overrides)
    if process_trajectories.main(config, force) != 0:
        print("\nTrajectory sampling failed. Stopping.")
        return 1

    print("\n\n" + "=" * 70)
    print("PROCESSING COMPLETE")
    print("=" * 70)
    print("\nNext steps:")
    print("   1. Review bounds.csv for any failed checks")
    print("   2. Plot points.csv (pc1 vs pc2, coloured by opt_value_ratio) per k")
    print("   3. Plot capacity_summary.csv against env_opt_value")
    return 0


if __name__ == "__main__":
    sys.exit(main())
