"""Shared fixtures for the pve-lab test suite."""

import numpy as np
import pytest

from src import config
from src.mdp_core import Policy, TabularMdp


def random_mdp(seed: int, n_states: int = 4, n_actions: int = 2, discount: float = 0.9):
    """Dense random MDP: U(-1, 1) rewards, Dirichlet(1) transition rows."""
    rng = np.random.default_rng(seed)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    transition = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    return TabularMdp(reward, transition, discount)


def random_policy(seed: int, n_states: int = 4, n_actions: int = 2) -> Policy:
    rng = np.random.default_rng(seed + 1000)
    weights = rng.uniform(0.1, 1.0, size=(n_states, n_actions))
    return Policy(weights / weights.sum(axis=1, keepdims=True))


@pytest.fixture
def mdp():
    return random_mdp(0)


@pytest.fixture
def policy():
    return random_policy(0)


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    """Send every run directory to a temporary folder."""
    monkeypatch.setattr(config, "OUTPUT_PATH", tmp_path)
    return tmp_path
