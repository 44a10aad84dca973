"""
Exact dynamic programming over finite MDPs.

Every routine here is a pure function of immutable inputs: Bellman operators,
k-step and transition operators, policy evaluation, stationary distributions,
weighted norms and optimal planning.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from src.config import EVAL_TOL, MAX_POWER_ITERATIONS, STATIONARY_TOL, TIE_TOL
from src.exceptions import ArgumentError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

# Value functions and arbitrary v in V are plain float vectors over states.
StateFunction = NDArray[np.float64]
StateDistribution = NDArray[np.float64]

ROW_SUM_TOL = 1e-9


def _frozen(array, dtype=np.float64) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP with rewards r(s, a), transitions p(s' | s, a) and discount.

    ``reward`` has shape ``[n_states, n_actions]`` and ``transition`` has shape
    ``[n_actions, n_states, n_states]``. The same type plays the role of a learned
    model once a parameterization has been realized.
    """

    reward: NDArray[np.float64]
    transition: NDArray[np.float64]
    discount: float

    def __post_init__(self):
        reward = _frozen(self.reward)
        transition = _frozen(self.transition)
        if reward.ndim != 2:
            raise ShapeError(f"reward must be [n_states, n_actions], got shape {reward.shape}")
        n_states, n_actions = reward.shape
        if n_states < 1 or n_actions < 1:
            raise ShapeError("an MDP needs at least one state and one action")
        if transition.shape != (n_actions, n_states, n_states):
            raise ShapeError(
                f"transition must have shape {(n_actions, n_states, n_states)}, "
                f"got {transition.shape}"
            )
        if not (0.0 <= self.discount < 1.0):
            raise ArgumentError(f"discount must lie in [0, 1), got {self.discount}")
        if not np.all(np.isfinite(reward)):
            raise NumericalError("reward contains non-finite entries")
        if not np.all(np.isfinite(transition)):
            raise NumericalError("transition contains non-finite entries")
        if np.any(transition < 0.0):
            raise NumericalError("transition probabilities must be non-negative")
        row_sums = transition.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > ROW_SUM_TOL:
            raise NumericalError(
                "transition rows must sum to 1 "
                f"(max deviation {np.max(np.abs(row_sums - 1.0)):.3e})"
            )
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def allclose(self, other: TabularMdp, atol: float = 0.0) -> bool:
        return (
            self.reward.shape == other.reward.shape
            and np.allclose(self.reward, other.reward, rtol=0.0, atol=atol)
            and np.allclose(self.transition, other.transition, rtol=0.0, atol=atol)
            and self.discount == other.discount
        )


@dataclass(frozen=True, eq=False)
class Policy:
    """Per-state distribution over actions, ``probs`` of shape ``[n_states, n_actions]``."""

    probs: NDArray[np.float64]

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ShapeError(f"policy must be [n_states, n_actions], got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise NumericalError("policy contains non-finite entries")
        if np.any(probs < 0.0):
            raise NumericalError("policy probabilities must be non-negative")
        if np.max(np.abs(probs.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise NumericalError("policy rows must sum to 1")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.sum(self.probs == 1.0, axis=1) == 1))

    def actions(self) -> NDArray[np.int64]:
        """Chosen action per state; only meaningful for deterministic policies."""
        return np.argmax(self.probs, axis=1)

    @classmethod
    def from_actions(cls, actions, n_actions: int) -> Policy:
        actions = np.asarray(actions, dtype=np.int64)
        if np.any(actions < 0) or np.any(actions >= n_actions):
            raise ArgumentError("action index out of range")
        probs = np.zeros((actions.shape[0], n_actions))
        probs[np.arange(actions.shape[0]), actions] = 1.0
        return cls(probs)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> Policy:
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


def _check_policy(mdp: TabularMdp, policy: Policy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states} states, {mdp.n_actions} actions)"
        )


def _check_function(mdp: TabularMdp, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (mdp.n_states,):
        raise ShapeError(f"state function must have shape ({mdp.n_states},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericalError("state function contains non-finite entries")
    return v


def policy_reward(mdp: TabularMdp, policy: Policy) -> StateFunction:
    """Expected one-step reward r_pi(s) = sum_a pi(a|s) r(s, a)."""
    _check_policy(mdp, policy)
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def policy_transition(mdp: TabularMdp, policy: Policy) -> NDArray[np.float64]:
    """State-to-state kernel P_pi(s, s') = sum_a pi(a|s) p(s'|s, a)."""
    _check_policy(mdp, policy)
    return np.einsum("sa,ast->st", policy.probs, mdp.transition)


def bellman_operator(mdp: TabularMdp, policy: Policy, v) -> StateFunction:
    """Apply T_pi[v](s) = sum_a pi(a|s) [r(s,a) + gamma sum_s' p(s'|s,a) v(s')]."""
    v = _check_function(mdp, v)
    return policy_reward(mdp, policy) + mdp.discount * policy_transition(mdp, policy) @ v


def k_step_bellman(mdp: TabularMdp, policy: Policy, v, k: int) -> StateFunction:
    """Apply the Bellman operator k >= 1 times by iteration."""
    if k < 1:
        raise ArgumentError(f"k must be a positive integer, got {k}")
    v = _check_function(mdp, v)
    r_pi = policy_reward(mdp, policy)
    p_pi = policy_transition(mdp, policy)
    for _ in range(k):
        v = r_pi + mdp.discount * p_pi @ v
    return v


def transition_operator_k(mdp: TabularMdp, policy: Policy, x, k: int) -> StateFunction:
    """E[x(S_{t+k}) | S_t = s] under the MDP and policy; k = 0 is the identity."""
    if k < 0:
        raise ArgumentError(f"k must be non-negative, got {k}")
    x = _check_function(mdp, x)
    p_pi = policy_transition(mdp, policy)
    for _ in range(k):
        x = p_pi @ x
    return x


def policy_evaluation(
    mdp: TabularMdp,
    policy: Policy,
    method: Literal["exact", "iterative"] = "exact",
    tol: float = EVAL_TOL,
    max_iterations: int = 1_000_000,
) -> StateFunction:
    """Value function v_pi, by dense linear solve or by iterating T_pi.

    Raises:
        NumericalError: if the Bellman residual of the result exceeds 10 * tol.
    """
    if tol <= 0.0:
        raise ArgumentError(f"tol must be positive, got {tol}")
    r_pi = policy_reward(mdp, policy)
    p_pi = policy_transition(mdp, policy)

    if method == "exact":
        v = np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, r_pi)
    elif method == "iterative":
        v = np.zeros(mdp.n_states)
        for _ in range(max_iterations):
            v_next = r_pi + mdp.discount * p_pi @ v
            change = np.max(np.abs(v_next - v))
            v = v_next
            if change < tol:
                break
        else:
            raise NumericalError(
                f"iterative evaluation did not converge in {max_iterations} sweeps"
            )
    else:
        raise ArgumentError(f"unknown evaluation method: {method}")

    residual = np.max(np.abs(r_pi + mdp.discount * p_pi @ v - v))
    if not np.isfinite(residual) or residual > 10.0 * tol:
        raise NumericalError(f"policy evaluation residual {residual:.3e} exceeds {10.0 * tol:.1e}")
    return v


def stationary_distribution(
    mdp: TabularMdp,
    policy: Policy,
    teleport_eps: float = 1e-3,
    tol: float = STATIONARY_TOL,
    max_iterations: int = MAX_POWER_ITERATIONS,
) -> StateDistribution:
    """Stationary distribution of (1 - eps) P_pi + eps * Uniform, by power iteration."""
    if not (0.0 <= teleport_eps < 0.5):
        raise ArgumentError(f"teleport_eps must lie in [0, 0.5), got {teleport_eps}")
    n = mdp.n_states
    chain = (1.0 - teleport_eps) * policy_transition(mdp, policy) + teleport_eps / n
    d = np.full(n, 1.0 / n)
    for _ in range(max_iterations):
        d_next = d @ chain
        d_next /= d_next.sum()
        if np.max(np.abs(d_next - d)) < tol:
            return d_next
        d = d_next
    raise NumericalError(
        f"power iteration did not converge in {max_iterations} steps "
        f"(teleport_eps={teleport_eps}); the chain may be periodic or reducible"
    )


def weighted_norm(x, d) -> float:
    """sqrt(sum_s d(s) x(s)^2)."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if x.shape != d.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {d.shape}")
    return float(np.sqrt(np.sum(d * x * x)))


def sup_norm(x) -> float:
    return float(np.max(np.abs(np.asarray(x, dtype=np.float64))))


def q_values(mdp: TabularMdp, v) -> NDArray[np.float64]:
    """Action values r(s,a) + gamma sum_s' p(s'|s,a) v(s'), shape [n_states, n_actions]."""
    v = _check_function(mdp, v)
    return mdp.reward + mdp.discount * np.einsum("ast,t->sa", mdp.transition, v)


def greedy_actions(q: NDArray[np.float64]) -> NDArray[np.int64]:
    # lowest index among (numerically) tied maxima
    return np.argmax(q >= q.max(axis=1, keepdims=True) - TIE_TOL, axis=1)


def greedy_policy(mdp: TabularMdp, v) -> Policy:
    """Deterministic policy maximizing one-step lookahead on v; ties go to the lowest action."""
    return Policy.from_actions(greedy_actions(q_values(mdp, v)), mdp.n_actions)


def value_iteration(
    mdp: TabularMdp, tol: float = EVAL_TOL, max_iterations: int = 10_000_000
) -> tuple[StateFunction, Policy]:
    """Optimal values (optimality residual < tol in sup norm) and a greedy optimal policy."""
    if tol <= 0.0:
        raise ArgumentError(f"tol must be positive, got {tol}")
    v = np.zeros(mdp.n_states)
    for iteration in range(max_iterations):
        v_next = q_values(mdp, v).max(axis=1)
        residual = np.max(np.abs(v_next - v))
        v = v_next
        if residual < tol:
            logger.debug("value iteration converged after %d sweeps", iteration + 1)
            break
    else:
        raise NumericalError(f"value iteration did not converge in {max_iterations} sweeps")
    return v, greedy_policy(mdp, v)


def policy_iteration(
    mdp: TabularMdp, initial: Policy | None = None, max_iterations: int = 10_000
) -> tuple[StateFunction, Policy]:
    """Exact policy iteration; switches action only on strict improvement."""
    policy = initial if initial is not None else Policy.from_actions(
        np.zeros(mdp.n_states, dtype=np.int64), mdp.n_actions
    )
    for _ in range(max_iterations):
        v = policy_evaluation(mdp, policy)
        q = q_values(mdp, v)
        current = q[np.arange(mdp.n_states), policy.actions()]
        improvable = q.max(axis=1) > current + TIE_TOL
        if not np.any(improvable):
            return v, policy
        actions = policy.actions().copy()
        actions[improvable] = greedy_actions(q)[improvable]
        policy = Policy.from_actions(actions, mdp.n_actions)
    raise NumericalError(f"policy iteration did not converge in {max_iterations} steps")
