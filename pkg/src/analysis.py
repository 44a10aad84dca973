"""
Model-space geometry, trajectory sampling and numerical bound verification.

Bound verifiers compute every term exactly through the operators in
``src.mdp_core``; ``monte_carlo_muzero_loss`` is the one sampling-based check.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from src.config import INVARIANT_SLACK, TELEPORT_EPS
from src.environments import FourRoomsLayout
from src.exceptions import ArgumentError, ShapeError
from src.mdp_core import (
    Policy,
    TabularMdp,
    k_step_bellman,
    policy_evaluation,
    policy_iteration,
    policy_reward,
    stationary_distribution,
    sup_norm,
    transition_operator_k,
    weighted_norm,
)
from src.seeding import derive_rng

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Model-space geometry
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelVector:
    entries: NDArray[np.float64]
    run_id: str = ""
    snapshot: int = 0


def vectorize_model(model: TabularMdp, run_id: str = "", snapshot: int = 0) -> ModelVector:
    """Rewards row-major, then transitions action-major / row-major."""
    return ModelVector(
        np.concatenate([model.reward.ravel(), model.transition.ravel()]), run_id, snapshot
    )


def devectorize_model(
    vector: ModelVector | NDArray[np.float64], n_states: int, n_actions: int, discount: float
) -> TabularMdp:
    entries = vector.entries if isinstance(vector, ModelVector) else np.asarray(vector)
    n_reward = n_states * n_actions
    if entries.shape != (n_reward + n_actions * n_states * n_states,):
        raise ShapeError(f"vector of length {entries.shape} does not fit {n_states}x{n_actions}")
    return TabularMdp(
        entries[:n_reward].reshape(n_states, n_actions),
        entries[n_reward:].reshape(n_actions, n_states, n_states),
        discount,
    )


def _as_matrix(vectors) -> NDArray[np.float64]:
    if isinstance(vectors, np.ndarray):
        return np.atleast_2d(vectors).astype(np.float64)
    return np.stack([v.entries if isinstance(v, ModelVector) else np.asarray(v) for v in vectors])


def pca_project(vectors, dims: int = 2) -> NDArray[np.float64]:
    """Project onto the top ``dims`` principal directions of the centered data.

    Each direction's sign is chosen so its largest-magnitude loading is positive.
    """
    data = _as_matrix(vectors)
    if data.shape[0] < 2 or data.shape[0] < dims:
        raise ArgumentError(f"need at least max(2, {dims}) vectors, got {data.shape[0]}")
    centered = data - data.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:dims]
    if components.shape[0] < dims:
        raise ArgumentError(f"data has fewer than {dims} dimensions")
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(dims), pivots])
    signs[signs == 0.0] = 1.0
    return centered @ (components * signs[:, None]).T


def diameter(points) -> float:
    """Largest pairwise Euclidean distance."""
    x = _as_matrix(points)
    if x.shape[0] == 0:
        raise ArgumentError("diameter of an empty point set")
    sq = np.sum(x * x, axis=1)
    dist2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    return float(np.sqrt(max(float(dist2.max()), 0.0)))


def grouped_diameters(
    points, group_size: int, rng: np.random.Generator
) -> list[float]:
    """Diameters of random disjoint groups of ``group_size`` points (leftovers are dropped)."""
    x = _as_matrix(points)
    order = rng.permutation(x.shape[0])
    n_groups = x.shape[0] // group_size
    return [diameter(x[order[i * group_size : (i + 1) * group_size]]) for i in range(n_groups)]


def spearman_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties; 0 when either side is constant."""
    frame = pd.DataFrame({"x": x, "y": y}, dtype=float)
    rho = frame.corr(method="spearman").loc["x", "y"]
    return 0.0 if np.isnan(rho) else float(rho)


def optimal_value_ratio(
    env: TabularMdp, model: TabularMdp, env_optimal_values: NDArray[np.float64] | None = None
) -> float:
    """sum_s v^env of the model's optimal policy / sum_s v^env_*."""
    if env_optimal_values is None:
        env_optimal_values, _ = policy_iteration(env)
    _, model_policy = policy_iteration(model)
    return float(np.sum(policy_evaluation(env, model_policy)) / np.sum(env_optimal_values))


# --------------------------------------------------------------------------
# Trajectories
# --------------------------------------------------------------------------


def _sample_rows(rng: np.random.Generator, rows: NDArray[np.float64]) -> NDArray[np.int64]:
    cumulative = np.cumsum(rows, axis=1)
    u = rng.random(rows.shape[0])[:, None]
    return np.minimum(np.sum(u > cumulative, axis=1), rows.shape[1] - 1)


def sample_trajectories(
    mdp: TabularMdp,
    policy: Policy,
    n_traj: int,
    horizon: int,
    start_state: int,
    seed: int = 0,
) -> NDArray[np.int64]:
    """State sequences of shape ``[n_traj, horizon + 1]``; column 0 is the start state."""
    if horizon < 1 or n_traj < 1:
        raise ArgumentError("n_traj and horizon must be >= 1")
    if not (0 <= start_state < mdp.n_states):
        raise ArgumentError(f"start state {start_state} out of range")
    rng = derive_rng(seed, "trajectories")
    states = np.empty((n_traj, horizon + 1), dtype=np.int64)
    states[:, 0] = start_state
    for t in range(horizon):
        current = states[:, t]
        actions = _sample_rows(rng, policy.probs[current])
        states[:, t + 1] = _sample_rows(rng, mdp.transition[actions, current])
    return states


def count_non_adjacent_transitions(trajectories: NDArray[np.int64], layout: FourRoomsLayout) -> int:
    cells = np.asarray(layout.cells)
    rows, cols = cells[trajectories, 0], cells[trajectories, 1]
    steps = np.abs(np.diff(rows, axis=1)) + np.abs(np.diff(cols, axis=1))
    return int(np.sum(steps > 1))


# --------------------------------------------------------------------------
# Bounds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    components: dict[str, float] = field(default_factory=dict)
    satisfied: bool = True
    note: str = ""

    @classmethod
    def build(cls, lhs: float, rhs: float, note: str = "", **components: float) -> BoundReport:
        return cls(float(lhs), float(rhs), components, bool(lhs <= rhs + INVARIANT_SLACK), note)


def _check_k(**values: int) -> None:
    for name, value in values.items():
        if value < 1:
            raise ArgumentError(f"{name} must be >= 1, got {value}")


def verify_pve_bound(
    env: TabularMdp, model: TabularMdp, policy: Policy, v, k: int, n: int
) -> BoundReport:
    """||v_pi - T~^k v_pi|| <= (gamma^k + gamma^n) ||v_pi - v|| + ||T^n v - T~^k v||, sup norm."""
    _check_k(k=k, n=n)
    v_pi = policy_evaluation(env, policy)
    lhs = sup_norm(v_pi - k_step_bellman(model, policy, v_pi, k))
    eps_v = sup_norm(v_pi - v)
    eps_ve = sup_norm(k_step_bellman(env, policy, v, n) - k_step_bellman(model, policy, v, k))
    rhs = (model.discount**k + env.discount**n) * eps_v + eps_ve
    return BoundReport.build(lhs, rhs, eps_v=eps_v, eps_ve=eps_ve)


def _empirical_g(diff: NDArray[np.float64], d: NDArray[np.float64]) -> tuple[float, str]:
    if sup_norm(diff) == 0.0:
        return 1.0, "v equals v_pi; g set to 1"
    return sup_norm(diff) / max(weighted_norm(diff, d), 1e-12), ""


def verify_weighted_bound(
    env: TabularMdp,
    model: TabularMdp,
    policy: Policy,
    v,
    k: int,
    n: int,
    teleport_eps: float = TELEPORT_EPS,
) -> BoundReport:
    """The d_pi-weighted version of verify_pve_bound with an empirical smoothness constant g."""
    _check_k(k=k, n=n)
    d = stationary_distribution(env, policy, teleport_eps)
    v_pi = policy_evaluation(env, policy)
    diff = v_pi - np.asarray(v, dtype=np.float64)
    g, note = _empirical_g(diff, d)

    lhs = weighted_norm(v_pi - k_step_bellman(model, policy, v_pi, k), d)
    eps_v = weighted_norm(diff, d)
    eps_ve = weighted_norm(
        k_step_bellman(env, policy, v, n) - k_step_bellman(model, policy, v, k), d
    )
    rhs = (g * model.discount**k + env.discount**n) * eps_v + eps_ve
    return BoundReport.build(
        lhs, rhs, note,
        eps_v=eps_v, eps_ve=eps_ve, g=g,
        g_conservative=1.0 / np.sqrt(d.min()) if d.min() > 0 else np.inf,
        teleport_eps=teleport_eps,
    )


def _muzero_terms(env, model, policy, v, n, K, d):
    v = np.asarray(v, dtype=np.float64)
    t_n_v = k_step_bellman(env, policy, v, n)
    r_pi, r_model = policy_reward(env, policy), policy_reward(model, policy)
    reward_terms = [
        weighted_norm(
            transition_operator_k(env, policy, r_pi, k)
            - transition_operator_k(model, policy, r_model, k),
            d,
        )
        for k in range(K + 1)
    ]
    value_term = weighted_norm(t_n_v - v, d)
    transport_term = weighted_norm(
        transition_operator_k(env, policy, t_n_v, K) - transition_operator_k(model, policy, v, K), d
    )
    return value_term, transport_term, reward_terms


def muzero_bound_check(
    env: TabularMdp,
    model: TabularMdp,
    policy: Policy,
    v,
    n: int,
    K: int,
    teleport_eps: float = TELEPORT_EPS,
) -> BoundReport:
    """Check a * b * L >= ||v_pi - T~^K v_pi||^2_d, L the Jensen lower bound of E_d[muzero loss].

    L = ||T^n v - v||^2 + ||P^K T^n v - P~^K v||^2 + sum_{k<=K} ||P^k r_pi - P~^k r~_pi||^2,
    all in the d_pi-weighted norm, with a = gamma^K (g + gamma^n) / (1 - gamma^n) and b = a + K + 2.
    """
    _check_k(n=n, K=K)
    d = stationary_distribution(env, policy, teleport_eps)
    v_pi = policy_evaluation(env, policy)
    g, note = _empirical_g(v_pi - np.asarray(v, dtype=np.float64), d)
    gamma = env.discount

    value_term, transport_term, reward_terms = _muzero_terms(env, model, policy, v, n, K, d)
    lower_bound = value_term**2 + transport_term**2 + sum(t**2 for t in reward_terms)
    a = gamma**K * (g + gamma**n) / (1.0 - gamma**n)
    b = a + K + 2
    lhs = weighted_norm(v_pi - k_step_bellman(model, policy, v_pi, K), d) ** 2
    return BoundReport.build(
        lhs, a * b * lower_bound, note,
        g=g, a=a, b=b, lower_bound=lower_bound, teleport_eps=teleport_eps,
    )


def muzero_reward_decomposition_check(
    env: TabularMdp,
    model: TabularMdp,
    policy: Policy,
    v,
    n: int,
    K: int,
    teleport_eps: float = TELEPORT_EPS,
) -> BoundReport:
    """||T^{K+n} v - T~^K v||_d <= ||P^K T^n v - P~^K v||_d + sum_{k<=K} ||P^k r - P~^k r~||_d."""
    _check_k(n=n, K=K)
    d = stationary_distribution(env, policy, teleport_eps)
    _, transport_term, reward_terms = _muzero_terms(env, model, policy, v, n, K, d)
    lhs = weighted_norm(
        k_step_bellman(env, policy, v, K + n) - k_step_bellman(model, policy, v, K), d
    )
    return BoundReport.build(lhs, transport_term + sum(reward_terms), teleport_eps=teleport_eps)


def monte_carlo_muzero_loss(
    env: TabularMdp,
    model: TabularMdp,
    policy: Policy,
    v,
    n: int,
    K: int,
    n_samples: int,
    rng: np.random.Generator,
    teleport_eps: float = TELEPORT_EPS,
) -> tuple[float, float]:
    """Sampled E_{d_pi}[muzero loss] and its standard error.

    Start states come from d_pi. The environment rollout supplies rewards and the
    n-step targets V_{t+k}; the model rollout from the same start state runs
    independently under the policy and supplies v(z^k) and r~(z^k).

    Returns:
        (mean, standard error)
    """
    _check_k(n=n, K=K)
    v = np.asarray(v, dtype=np.float64)
    d = stationary_distribution(env, policy, teleport_eps)
    gamma = env.discount
    starts = rng.choice(env.n_states, size=n_samples, p=d)

    def rollout(mdp: TabularMdp, length: int):
        states = np.empty((n_samples, length + 1), dtype=np.int64)
        rewards = np.empty((n_samples, length))
        states[:, 0] = starts
        for t in range(length):
            actions = _sample_rows(rng, policy.probs[states[:, t]])
            rewards[:, t] = mdp.reward[states[:, t], actions]
            states[:, t + 1] = _sample_rows(rng, mdp.transition[actions, states[:, t]])
        return states, rewards

    env_states, env_rewards = rollout(env, K + n)
    model_states, model_rewards = rollout(model, K + 1)

    discounts = gamma ** np.arange(n)
    loss = np.zeros(n_samples)
    for k in range(K + 1):
        target = env_rewards[:, k : k + n] @ discounts + gamma**n * v[env_states[:, k + n]]
        loss += (target - v[model_states[:, k]]) ** 2
        loss += (env_rewards[:, k] - model_rewards[:, k]) ** 2
    return float(loss.mean()), float(loss.std(ddof=1) / np.sqrt(n_samples))


# --------------------------------------------------------------------------
# Random instances for the bound suites
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundCase:
    env: TabularMdp
    model: TabularMdp
    policy: Policy
    v: NDArray[np.float64]
    k: int
    n: int


def random_dense_mdp(
    rng: np.random.Generator, n_states: int, n_actions: int, discount: float
) -> TabularMdp:
    """Rewards ~ U(-1, 1); every transition row ~ Dirichlet(1), so all chains are ergodic."""
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    transition = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    return TabularMdp(reward, transition, discount)


def sample_bound_case(
    seed: int, suite: str, index: int, discount_range: tuple[float, float] = (0.5, 0.99)
) -> BoundCase:
    """One random (env, model, policy, v, k, n) tuple over 4 to 6 states and 2 or 3 actions."""
    rng = derive_rng(seed, f"bounds-{suite}", index)
    n_states = int(rng.integers(4, 7))
    n_actions = int(rng.integers(2, 4))
    discount = float(rng.uniform(*discount_range))
    env = random_dense_mdp(rng, n_states, n_actions, discount)
    model = random_dense_mdp(rng, n_states, n_actions, discount)
    weights = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    policy = Policy(weights / weights.sum(axis=1, keepdims=True))
    v = rng.uniform(-1.0, 1.0, size=n_states) / (1.0 - discount)
    return BoundCase(env, model, policy, v, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
