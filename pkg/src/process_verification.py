"""
Verification runs: the proposition fixtures plus randomized suites for every
value-error bound, written to one bounds table.
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from src.analysis import (
    BoundReport,
    monte_carlo_muzero_loss,
    muzero_bound_check,
    muzero_reward_decomposition_check,
    sample_bound_case,
    verify_pve_bound,
    verify_weighted_bound,
)
from src.cells import run_cells
from src.config import INVARIANT_SLACK, ExperimentConfig
from src.exceptions import ArgumentError, PveLabError
from src.file_formats import prepare_output_dir, write_csv, write_manifest
from src.propositions import run_proposition_checks
from src.seeding import derive_rng

logger = logging.getLogger(__name__)

BOUND_SUITES = ("pve", "weighted", "muzero", "muzero_decomposition")

# a >= 1 in the muzero chain needs a discount close to 1
MUZERO_DISCOUNTS = (0.9, 0.99)


@dataclass(frozen=True)
class BoundTask:
    suite: str
    seed: int
    index: int
    teleport_eps: float


def _discount_range(suite: str) -> tuple[float, float]:
    return MUZERO_DISCOUNTS if suite.startswith("muzero") else (0.5, 0.99)


def _report_row(suite: str, seed: int, case, report: BoundReport) -> dict:
    return {
        "suite": suite,
        "seed": seed,
        "case": case,
        "lhs": report.lhs,
        "rhs": report.rhs,
        "g": report.components.get("g", np.nan),
        "a": report.components.get("a", np.nan),
        "b": report.components.get("b", np.nan),
        "satisfied": report.satisfied,
    }


def check_bound_case(task: BoundTask) -> dict:
    """Evaluate one randomized tuple of a bound suite; returns a bounds-table row."""
    case = sample_bound_case(task.seed, task.suite, task.index, _discount_range(task.suite))
    args = (case.env, case.model, case.policy, case.v)
    if task.suite == "pve":
        report = verify_pve_bound(*args, case.k, case.n)
    elif task.suite == "weighted":
        report = verify_weighted_bound(*args, case.k, case.n, task.teleport_eps)
    elif task.suite == "muzero":
        report = muzero_bound_check(*args, case.n, case.k, task.teleport_eps)
    elif task.suite == "muzero_decomposition":
        report = muzero_reward_decomposition_check(*args, case.n, case.k, task.teleport_eps)
    else:
        raise ArgumentError(f"unknown bound suite: {task.suite}")
    return _report_row(task.suite, task.seed, task.index, report)


def run_bound_suite(
    suite: str, seed: int, count: int, teleport_eps: float = 0.0, workers: int = 1
) -> list[dict]:
    tasks = [BoundTask(suite, seed, i, teleport_eps) for i in range(count)]
    rows = run_cells(check_bound_case, tasks, workers)
    violations = sum(not row["satisfied"] for row in rows)
    logger.info("suite %s: %d cases, %d violations", suite, count, violations)
    return rows


def run_monte_carlo_checks(
    seed: int, cases: int, samples: int, teleport_eps: float = 0.0
) -> list[dict]:
    """Sampled muzero loss against its exact lower bound, allowing 3 standard errors."""
    rows = []
    for index in range(cases):
        case = sample_bound_case(seed, "muzero", index, MUZERO_DISCOUNTS)
        args = (case.env, case.model, case.policy, case.v, case.n, case.k)
        exact = muzero_bound_check(*args, teleport_eps)
        rng = derive_rng(seed, "monte-carlo", index)
        mean, se = monte_carlo_muzero_loss(*args, samples, rng, teleport_eps)
        lhs = exact.components["lower_bound"] - 3.0 * se
        rows.append({
            "suite": "muzero_monte_carlo",
            "seed": seed,
            "case": index,
            "lhs": lhs,
            "rhs": mean,
            "g": exact.components["g"],
            "a": exact.components["a"],
            "b": exact.components["b"],
            "satisfied": bool(lhs <= mean + INVARIANT_SLACK),
        })
    return rows


def run_verification(config: ExperimentConfig) -> pd.DataFrame:
    rows: list[dict] = []
    if config.suite in ("props", "all"):
        print("\nProposition fixtures")
        for result in run_proposition_checks(config.seed):
            rows.append({
                "suite": "props",
                "seed": config.seed,
                "case": result.name,
                "lhs": result.lhs,
                "rhs": result.rhs,
                "g": np.nan,
                "a": np.nan,
                "b": np.nan,
                "satisfied": result.passed,
            })
    if config.suite in ("bounds", "all"):
        for suite in BOUND_SUITES:
            print(f"Bound suite {suite}: {config.count} random cases")
            rows += run_bound_suite(
                suite, config.seed, config.count, config.bounds_teleport_eps, config.workers
            )
        if config.monte_carlo_cases > 0:
            print(f"Monte-Carlo muzero loss: {config.monte_carlo_cases} cases")
            rows += run_monte_carlo_checks(
                config.seed,
                config.monte_carlo_cases,
                config.monte_carlo_samples,
                config.bounds_teleport_eps,
            )
    return pd.DataFrame(rows)


def save_verification(df: pd.DataFrame, out_dir: Path) -> list[Path]:
    path = write_csv(out_dir / "bounds.csv", df, "bounds")
    print(f"CSV file created: {path}")
    return [path]


def main(config: ExperimentConfig, force: bool = False) -> int:
    try:
        print("\npve-lab - Verification")
        print(f"Suite: {config.suite}  Seed: {config.seed}  Cases per bound: {config.count}")

        out_dir = prepare_output_dir(config, force)
        df = run_verification(config)
        files = save_verification(df, out_dir)

        failures = df[~df["satisfied"].astype(bool)]
        notes = [f"{r.suite} case {r.case} failed (seed {r.seed})" for r in failures.itertuples()]
        write_manifest(out_dir, config, files, notes)

        print("\nSUMMARY")
        for suite, group in df.groupby("suite", sort=False):
            passed = int(group["satisfied"].astype(bool).sum())
            print(f"  {suite:<22} {passed}/{len(group)} passed")
        if len(failures):
            print(f"\n{len(failures)} checks failed:")
            for note in notes:
                print(f"  {note}")
            return 1
        print("\nAll checks passed")
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

    sys.exit(main(load_experiment_config(None, "verify")))
