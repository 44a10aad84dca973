"""
Plain-text model and dataset files, CSV tables and the run manifest.

Reals are written with 17 significant digits so a write/read cycle is exact.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from src.config import FLOAT_FORMAT, MANIFEST_NAME, ExperimentConfig
from src.exceptions import FileFormatError, OutputExistsError
from src.mdp_core import TabularMdp
from src.model_learning import PolicyValueDataset

logger = logging.getLogger(__name__)

MODEL_HEADER = "# pve-lab model v1"
DATASET_HEADER = "# pve-lab dataset v1"

CSV_COLUMNS = {
    "points": ["run_id", "k", "snapshot", "model_id", "pc1", "pc2", "loss", "opt_value_ratio"],
    "diameters": ["k", "snapshot", "diameter_2d", "diameter_raw"],
    "diameter_groups": ["k", "group", "diameter_2d"],
    "capacity": ["rank", "family", "seed", "opt_value_mean", "env_opt_value"],
    "bounds": ["suite", "seed", "case", "lhs", "rhs", "g", "a", "b", "satisfied"],
    "trajectories": ["traj_id", "t", "state"],
}


def _format_row(values) -> str:
    return " ".join(FLOAT_FORMAT % x for x in np.ravel(values))


def _read_header(lines: list[str], expected: str, keys: tuple[str, ...], path) -> dict[str, str]:
    if not lines or lines[0].strip() != expected:
        raise FileFormatError(f"{path}: expected header {expected!r}")
    header = {}
    for line, key in zip(lines[1 : 1 + len(keys)], keys):
        name, _, value = line.strip().partition(" ")
        if name != key:
            raise FileFormatError(f"{path}: expected {key!r}, found {line.strip()!r}")
        header[key] = value.strip()
    if len(header) != len(keys):
        raise FileFormatError(f"{path}: truncated header")
    return header


def write_model_file(path: str | Path, model: TabularMdp, rank: int | str = "full") -> Path:
    """Header, then one reward row per line, then one transition row per line."""
    path = Path(path)
    lines = [
        MODEL_HEADER,
        f"n_states {model.n_states}",
        f"n_actions {model.n_actions}",
        f"rank {rank}",
        f"discount {FLOAT_FORMAT % model.discount}",
    ]
    lines += [_format_row(row) for row in model.reward]
    lines += [_format_row(row) for row in model.transition.reshape(-1, model.n_states)]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_model_file(path: str | Path) -> tuple[TabularMdp, int | str]:
    """Read a model file.

    Returns:
        (model, rank) where rank is "full" or an integer
    """
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"model file not found: {path}")
    lines = path.read_text().splitlines()
    header = _read_header(lines, MODEL_HEADER, ("n_states", "n_actions", "rank", "discount"), path)
    try:
        n_states, n_actions = int(header["n_states"]), int(header["n_actions"])
        rank: int | str = header["rank"] if header["rank"] == "full" else int(header["rank"])
        discount = float(header["discount"])
        values = np.array(" ".join(lines[5:]).split(), dtype=np.float64)
    except ValueError as e:
        raise FileFormatError(f"{path}: {e}") from e

    n_reward = n_states * n_actions
    expected = n_reward + n_actions * n_states * n_states
    if values.size != expected:
        raise FileFormatError(f"{path}: expected {expected} reals, found {values.size}")
    model = TabularMdp(
        values[:n_reward].reshape(n_states, n_actions),
        values[n_reward:].reshape(n_actions, n_states, n_states),
        discount,
    )
    return model, rank


def write_dataset_file(path: str | Path, dataset: PolicyValueDataset) -> Path:
    """One line per pair: the policy row-major, then the function values."""
    path = Path(path)
    lines = [
        DATASET_HEADER,
        f"n_states {dataset.n_states}",
        f"n_actions {dataset.n_actions}",
        f"mode {dataset.mode}",
        f"count {len(dataset)}",
    ]
    lines += [
        _format_row(np.concatenate([probs.ravel(), values]))
        for probs, values in zip(dataset.policies, dataset.functions)
    ]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_dataset_file(path: str | Path) -> PolicyValueDataset:
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"dataset file not found: {path}")
    lines = path.read_text().splitlines()
    header = _read_header(lines, DATASET_HEADER, ("n_states", "n_actions", "mode", "count"), path)
    n_states, n_actions, count = (int(header[k]) for k in ("n_states", "n_actions", "count"))
    rows = [line for line in lines[5:] if line.strip()]
    if len(rows) != count:
        raise FileFormatError(f"{path}: header says {count} pairs, found {len(rows)}")
    data = np.array([row.split() for row in rows], dtype=np.float64)
    width = n_states * n_actions
    if data.shape[1] != width + n_states:
        raise FileFormatError(f"{path}: rows must hold {width + n_states} reals")
    return PolicyValueDataset(
        data[:, :width].reshape(count, n_states, n_actions), data[:, width:], header["mode"]
    )


def write_csv(path: str | Path, rows: list[dict] | pd.DataFrame, table: str) -> Path:
    """Write a tidy table with the fixed column order for ``table``."""
    path = Path(path)
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
    df = df.reindex(columns=CSV_COLUMNS[table])
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def prepare_output_dir(config: ExperimentConfig, force: bool = False) -> Path:
    """Create the run directory, refusing to reuse one written by a different config.

    Raises:
        OutputExistsError: if the directory's manifest records another config hash
            and ``force`` is False.
    """
    out_dir = config.resolve_output_dir()
    manifest_path = out_dir / MANIFEST_NAME
    if manifest_path.exists() and not force:
        try:
            recorded = json.loads(manifest_path.read_text()).get("config_hash")
        except json.JSONDecodeError as e:
            raise FileFormatError(f"unreadable manifest {manifest_path}: {e}") from e
        if recorded != config.config_hash():
            raise OutputExistsError(
                f"{out_dir} holds results of config {recorded}; rerun with --force to overwrite"
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def write_manifest(
    out_dir: Path, config: ExperimentConfig, files: list[Path], notes: list[str] | None = None
) -> Path:
    manifest = {
        "experiment": config.name,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "notes": notes or [],
        "files": sorted(str(Path(f).relative_to(out_dir)) for f in files),
    }
    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("wrote manifest %s", manifest_path)
    return manifest_path
