"""
Policy / function dataset generation.

Random policies and functions feed the model-space experiment; partial policy
iteration plus noise augmentation produces the policy families of the capacity
experiment.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np

from src.config import TIE_TOL
from src.exceptions import ArgumentError
from src.mdp_core import Policy, TabularMdp, greedy_actions, policy_evaluation, q_values
from src.model_learning import PolicyValueDataset
from src.seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

DATASET_KINDS = ("random-mixed", "pi-derived-stochastic", "pi-derived-deterministic")
RESAMPLE_ATTEMPTS = 10


@dataclass(frozen=True)
class DatasetSpec:
    count: int
    kind: str = "random-mixed"
    noise_fraction: float = 0.1
    augment_per_policy: int = 100
    update_fraction: float = 0.1
    seed: int = 0
    # random-mixed only: label each policy with its value instead of a random function
    label_values: bool = False

    def __post_init__(self):
        if self.count < 1:
            raise ArgumentError(f"dataset count must be >= 1, got {self.count}")
        if self.kind not in DATASET_KINDS:
            raise ArgumentError(f"unknown dataset kind {self.kind!r}; known: {DATASET_KINDS}")
        if not (0.0 < self.noise_fraction <= 1.0):
            raise ArgumentError(f"noise_fraction must lie in (0, 1], got {self.noise_fraction}")
        if self.augment_per_policy < 1:
            raise ArgumentError("augment_per_policy must be >= 1")


def sample_random_policy(
    rng: np.random.Generator, n_states: int, n_actions: int, mode: Literal["det", "stoch"] = "det"
) -> Policy:
    """Uniform action per state (det) or per-state normalized U(0, 1) weights (stoch)."""
    if mode == "det":
        return Policy.from_actions(rng.integers(0, n_actions, size=n_states), n_actions)
    if mode == "stoch":
        weights = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
        return Policy(weights / weights.sum(axis=1, keepdims=True))
    raise ArgumentError(f"policy mode must be 'det' or 'stoch', got {mode!r}")


def sample_random_function(
    rng: np.random.Generator, n_states: int, lo: float = -1.0, hi: float = 1.0
) -> np.ndarray:
    if not lo < hi:
        raise ArgumentError(f"need lo < hi, got [{lo}, {hi}]")
    return rng.uniform(lo, hi, size=n_states)


def generate_pi_policies(
    env: TabularMdp, target_count: int, update_fraction: float = 0.1, seed: int = 0
) -> list[Policy]:
    """Policies visited by partial policy iteration from random deterministic starts.

    Each step evaluates the current policy exactly and switches to the greedy
    action only at a random subset of states (``update_fraction`` of them) where
    the switch is a strict improvement. The subset is redrawn up to 10 times when
    it holds no improvable state; after that every improvable state is updated.
    A run restarts from a fresh random policy once it reaches an optimal policy.

    Args:
        env: environment the policies are evaluated in
        target_count: number of policies to store (starting policies included)
        update_fraction: share of states considered at each improvement step
        seed: root seed

    Returns:
        Stored policies, in visiting order
    """
    if target_count < 1:
        raise ArgumentError(f"target_count must be >= 1, got {target_count}")
    if not (0.0 < update_fraction <= 1.0):
        raise ArgumentError(f"update_fraction must lie in (0, 1], got {update_fraction}")
    rng = derive_rng(seed, "pi-policies")
    n_states, n_actions = env.n_states, env.n_actions
    n_selected = max(1, round(update_fraction * n_states))

    stored: list[Policy] = []
    runs = 0
    while len(stored) < target_count:
        runs += 1
        policy = sample_random_policy(rng, n_states, n_actions, "det")
        stored.append(policy)
        while len(stored) < target_count:
            q = q_values(env, policy_evaluation(env, policy))
            actions = policy.actions().copy()
            improvable = q.max(axis=1) > q[np.arange(n_states), actions] + TIE_TOL
            if not np.any(improvable):
                break
            for _ in range(RESAMPLE_ATTEMPTS):
                selected = np.zeros(n_states, dtype=bool)
                selected[rng.choice(n_states, size=n_selected, replace=False)] = True
                selected &= improvable
                if np.any(selected):
                    break
            else:
                selected = improvable
            actions[selected] = greedy_actions(q)[selected]
            policy = Policy.from_actions(actions, n_actions)
            stored.append(policy)

    logger.info("stored %d policies from %d policy-iteration runs", len(stored), runs)
    return stored


def augment_with_noise(
    policy: Policy,
    mode: Literal["det", "stoch"],
    fraction: float = 0.1,
    copies: int = 100,
    rng: np.random.Generator | None = None,
) -> list[Policy]:
    """Copies of ``policy`` with the rows at a random ``fraction`` of states replaced.

    Stochastic noise writes the uniform distribution, deterministic noise a random
    one-hot row.
    """
    if not (0.0 < fraction <= 1.0):
        raise ArgumentError(f"fraction must lie in (0, 1], got {fraction}")
    if mode not in ("det", "stoch"):
        raise ArgumentError(f"noise mode must be 'det' or 'stoch', got {mode!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    n_states, n_actions = policy.n_states, policy.n_actions
    n_noisy = max(1, round(fraction * n_states))

    out = []
    for _ in range(copies):
        probs = policy.probs.copy()
        states = rng.choice(n_states, size=n_noisy, replace=False)
        if mode == "stoch":
            probs[states] = 1.0 / n_actions
        else:
            probs[states] = 0.0
            probs[states, rng.integers(0, n_actions, size=n_noisy)] = 1.0
        out.append(Policy(probs))
    return out


def label_with_values(env: TabularMdp, policies: Sequence[Policy]) -> PolicyValueDataset:
    """Pair each policy with its exact value function in ``env``."""
    if not policies:
        raise ArgumentError("no policies to label")
    values = np.stack([policy_evaluation(env, policy) for policy in policies])
    probs = np.stack([policy.probs for policy in policies])
    return PolicyValueDataset(probs, values, mode="values")


def _random_mixed(env: TabularMdp, spec: DatasetSpec) -> PolicyValueDataset:
    rng = derive_rng(spec.seed, "random-mixed")
    policies, functions = [], []
    for _ in range(spec.count):
        mode = "det" if rng.random() < 0.5 else "stoch"
        policies.append(sample_random_policy(rng, env.n_states, env.n_actions, mode))
        functions.append(sample_random_function(rng, env.n_states))
    if spec.label_values:
        return label_with_values(env, policies)
    return PolicyValueDataset(np.stack([p.probs for p in policies]), np.stack(functions))


def _pi_derived(env: TabularMdp, spec: DatasetSpec) -> PolicyValueDataset:
    mode = "stoch" if spec.kind == "pi-derived-stochastic" else "det"
    base_count = math.ceil(spec.count / spec.augment_per_policy)
    bases = generate_pi_policies(
        env, base_count, spec.update_fraction, derive_seed(spec.seed, "pi-bases")
    )
    rng = derive_rng(spec.seed, "noise", 0 if mode == "stoch" else 1)
    policies: list[Policy] = []
    for base in bases:
        policies.extend(
            augment_with_noise(base, mode, spec.noise_fraction, spec.augment_per_policy, rng)
        )
    return label_with_values(env, policies[: spec.count])


def build_dataset(env: TabularMdp, spec: DatasetSpec) -> PolicyValueDataset:
    """Dataset of ``spec.count`` pairs; identical spec and seed give an identical dataset."""
    dataset = _random_mixed(env, spec) if spec.kind == "random-mixed" else _pi_derived(env, spec)
    logger.info("built %s dataset with %d pairs (%s)", spec.kind, len(dataset), dataset.mode)
    return dataset


def concat_datasets(shards: Sequence[PolicyValueDataset]) -> PolicyValueDataset:
    """Concatenate shards in the order given."""
    if not shards:
        raise ArgumentError("no shards to concatenate")
    modes = {shard.mode for shard in shards}
    if len(modes) != 1:
        raise ArgumentError(f"cannot mix dataset modes {sorted(modes)}")
    return PolicyValueDataset(
        np.concatenate([shard.policies for shard in shards]),
        np.concatenate([shard.functions for shard in shards]),
        mode=modes.pop(),
    )
