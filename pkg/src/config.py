"""Shared configuration constants and experiment configuration loading for pve-lab."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from src.exceptions import ConfigError

# Base paths
BASE_PATH = Path(__file__).parent.parent
CONFIG_PATH = BASE_PATH / "configs"
OUTPUT_PATH = Path(os.environ.get("PVE_LAB_OUT", BASE_PATH / "output"))

# Numerical defaults
DEFAULT_DISCOUNT = 0.99
DEFAULT_SLIP = 0.2
EVAL_TOL = 1e-10
INVARIANT_SLACK = 1e-9
STATIONARY_TOL = 1e-12
MAX_POWER_ITERATIONS = 200_000
TELEPORT_EPS = 1e-3
TIE_TOL = 1e-12

# Adam defaults
ADAM_BETA1 = 0.99
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# File formats
FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"

EXPERIMENTS = ("model_space", "capacity_sweep", "verify", "trajectories")
INFINITE_K = math.inf
SNAPSHOT_FILES = ("none", "final", "all")


def _parse_k(token: str) -> float:
    token = token.strip().lower()
    if token in ("inf", "infinity", "pve"):
        return INFINITE_K
    return int(token)


def _parse_list(raw: str, cast) -> list:
    return [cast(token) for token in raw.split(",") if token.strip()]


def format_k(k: float) -> str:
    return "inf" if math.isinf(k) else str(int(k))


@dataclass
class ExperimentConfig:
    name: str = "model_space"

    # environment
    environment: str = "four_rooms"
    slip: float = DEFAULT_SLIP
    slip_includes_intended: bool = True
    discount: float = DEFAULT_DISCOUNT

    # model learning
    loss: str = "ve"  # "ve" or "pve"; k = inf always trains with the PVE loss
    k_list: list[float] = field(default_factory=lambda: [1, 5, 10, INFINITE_K])
    pve_k: int = 1
    model_count: int = 12
    rank_list: list[int | str] = field(default_factory=lambda: ["full"])
    iterations: int = 50_000
    learning_rate: float = 1e-3
    batch_size: int = 50
    snapshot_every: int = 1000
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS

    # datasets
    dataset_kind: str = "random-mixed"
    dataset_count: int = 10_000
    families: list[str] = field(
        default_factory=lambda: ["pi-derived-stochastic", "pi-derived-deterministic"]
    )
    noise_fraction: float = 0.1
    augment_per_policy: int = 100
    resample_dataset_per_model: bool = False

    # seeds and outputs
    seed: int = 0
    seed_count: int = 3
    output_dir: str = ""
    workers: int = 1

    # model-space geometry
    diameter_group_size: int = 4
    snapshot_files: str = "final"  # which snapshots get model files: none, final or all

    # verification
    suite: str = "all"
    count: int = 200
    bounds_teleport_eps: float = 0.0
    teleport_eps: float = TELEPORT_EPS
    monte_carlo_cases: int = 3
    monte_carlo_samples: int = 100_000

    # trajectories
    model_file: str = ""
    n_trajectories: int = 5000
    horizon: int = 30
    start_cell: str = "bottom-right"

    def validate(self) -> None:
        problems = []
        if self.name not in EXPERIMENTS:
            problems.append(f"name must be one of {EXPERIMENTS}, got {self.name!r}")
        if not (0.0 <= self.slip <= 1.0):
            problems.append(f"slip must lie in [0, 1], got {self.slip}")
        if not (0.0 <= self.discount < 1.0):
            problems.append(f"discount must lie in [0, 1), got {self.discount}")
        if self.loss not in ("ve", "pve"):
            problems.append(f"loss must be 've' or 'pve', got {self.loss!r}")
        if not self.k_list or any(k < 1 for k in self.k_list):
            problems.append("k_list must be a nonempty list of positive integers or 'inf'")
        if self.pve_k < 1:
            problems.append(f"pve_k must be >= 1, got {self.pve_k}")
        if self.model_count < 1:
            problems.append(f"model_count must be >= 1, got {self.model_count}")
        for rank in self.rank_list:
            if rank != "full" and (not isinstance(rank, int) or rank < 1):
                problems.append(f"rank must be 'full' or a positive integer, got {rank!r}")
        if self.iterations < 0:
            problems.append(f"iterations must be >= 0, got {self.iterations}")
        if self.learning_rate <= 0.0:
            problems.append(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.snapshot_every < 1:
            problems.append(f"snapshot_every must be >= 1, got {self.snapshot_every}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            problems.append("beta1 and beta2 must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            problems.append(f"adam_eps must be positive, got {self.adam_eps}")
        kinds = ("random-mixed", "pi-derived-stochastic", "pi-derived-deterministic")
        if self.dataset_kind not in kinds:
            problems.append(f"dataset_kind must be one of {kinds}, got {self.dataset_kind!r}")
        for family in self.families:
            if family not in kinds[1:]:
                problems.append(f"family must be one of {kinds[1:]}, got {family!r}")
        if self.dataset_count < 1:
            problems.append(f"dataset_count must be >= 1, got {self.dataset_count}")
        if not (0.0 < self.noise_fraction <= 1.0):
            problems.append(f"noise_fraction must lie in (0, 1], got {self.noise_fraction}")
        if self.augment_per_policy < 1:
            problems.append(f"augment_per_policy must be >= 1, got {self.augment_per_policy}")
        if self.seed_count < 1:
            problems.append(f"seed_count must be >= 1, got {self.seed_count}")
        if self.workers < 1:
            problems.append(f"workers must be >= 1, got {self.workers}")
        if self.diameter_group_size < 2:
            problems.append(f"diameter_group_size must be >= 2, got {self.diameter_group_size}")
        if self.snapshot_files not in SNAPSHOT_FILES:
            problems.append(
                f"snapshot_files must be one of {SNAPSHOT_FILES}, got {self.snapshot_files!r}"
            )
        if self.suite not in ("props", "bounds", "all"):
            problems.append(f"suite must be props, bounds or all, got {self.suite!r}")
        if self.count < 1:
            problems.append(f"count must be >= 1, got {self.count}")
        for key in ("bounds_teleport_eps", "teleport_eps"):
            if not (0.0 <= getattr(self, key) < 0.5):
                problems.append(f"{key} must lie in [0, 0.5), got {getattr(self, key)}")
        if self.n_trajectories < 1 or self.horizon < 1:
            problems.append("n_trajectories and horizon must be >= 1")
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["k_list"] = [format_k(k) for k in self.k_list]
        data.pop("output_dir")
        data.pop("workers")
        return data

    def config_hash(self) -> str:
        """SHA-256 over the canonical JSON of every setting that affects results."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def resolve_output_dir(self) -> Path:
        if self.output_dir:
            return Path(self.output_dir)
        return OUTPUT_PATH / f"{self.name}-{self.config_hash()[:12]}"


def _coerce(config_field, raw: str):
    name = config_field.name
    if name == "k_list":
        return _parse_list(raw, _parse_k)
    if name == "rank_list":
        return _parse_list(raw, lambda t: "full" if t.strip() == "full" else int(t))
    if name == "families":
        return _parse_list(raw, str.strip)
    default = config_field.default
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def load_experiment_config(
    path: str | Path | None, section: str, overrides: dict | None = None
) -> ExperimentConfig:
    """Build a validated config from defaults, an INI section and command-line overrides.

    Args:
        path: INI file with one section per experiment, or None for defaults only
        section: experiment name, e.g. 'model_space'
        overrides: already-typed values that win over the file

    Returns:
        Validated ExperimentConfig
    """
    values: dict = {"name": section}
    known = {f.name: f for f in fields(ExperimentConfig)}

    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise ConfigError([f"config file not found: {path}"])
        if parser.has_section(section):
            problems = []
            for key, raw in parser.items(section):
                if key not in known:
                    problems.append(f"unknown key {key!r} in [{section}]")
                    continue
                try:
                    values[key] = _coerce(known[key], raw)
                except ValueError as e:
                    problems.append(f"{key}: {e}")
            if problems:
                raise ConfigError(problems)

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    config = ExperimentConfig(**values)
    config.validate()
    return config
