"""
Tests for the exact dynamic-programming core
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.exceptions import ArgumentError, NumericalError, ShapeError
from src.mdp_core import (
    Policy,
    TabularMdp,
    bellman_operator,
    greedy_policy,
    k_step_bellman,
    policy_evaluation,
    policy_iteration,
    policy_reward,
    policy_transition,
    stationary_distribution,
    sup_norm,
    transition_operator_k,
    value_iteration,
    weighted_norm,
)
from tests.conftest import random_mdp, random_policy

seeds = st.integers(min_value=0, max_value=10_000)
discounts = st.floats(min_value=0.1, max_value=0.95)


def test_mdp_rejects_bad_inputs():
    """Test TabularMdp validation"""
    reward = np.zeros((2, 1))
    with pytest.raises(ShapeError):
        TabularMdp(reward, np.ones((1, 3, 3)) / 3, 0.9)
    with pytest.raises(NumericalError):
        TabularMdp(reward, np.full((1, 2, 2), 0.6), 0.9)
    with pytest.raises(ArgumentError):
        TabularMdp(reward, np.full((1, 2, 2), 0.5), 1.0)


def test_non_finite_inputs_are_rejected(mdp, policy):
    reward = np.zeros((2, 1))
    with pytest.raises(NumericalError):
        TabularMdp(reward, np.full((1, 2, 2), np.nan), 0.9)
    with pytest.raises(NumericalError):
        TabularMdp(np.array([[np.inf], [0.0]]), np.full((1, 2, 2), 0.5), 0.9)
    with pytest.raises(NumericalError):
        Policy(np.array([[np.nan]]))
    with pytest.raises(NumericalError):
        Policy(np.array([[np.inf, 0.0]]))
    with pytest.raises(NumericalError):
        bellman_operator(mdp, policy, np.array([np.inf, 0.0, 0.0, 0.0]))
    with pytest.raises(NumericalError):
        transition_operator_k(mdp, policy, np.full(4, np.nan), 2)


def test_mdp_arrays_are_read_only(mdp):
    with pytest.raises(ValueError):
        mdp.reward[0, 0] = 5.0


def test_self_loop_value():
    """One state paying 1 forever is worth 1 / (1 - gamma)"""
    mdp = TabularMdp(np.ones((1, 1)), np.ones((1, 1, 1)), 0.9)
    v = policy_evaluation(mdp, Policy.uniform(1, 1))
    np.testing.assert_allclose(v, [10.0])


def test_three_state_ring_k_step():
    """g(i) = i on a 3-ring, gamma 0.5: three steps from s1 collect 1 + 1 + 0.75"""
    transition = np.zeros((1, 3, 3))
    transition[0, [0, 1, 2], [1, 2, 0]] = 1.0
    mdp = TabularMdp(np.array([[1.0], [2.0], [3.0]]), transition, 0.5)
    u = k_step_bellman(mdp, Policy.uniform(3, 1), np.zeros(3), 3)
    assert u[0] == pytest.approx(2.75)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, discount=discounts, k=st.integers(min_value=1, max_value=6))
def test_k_step_is_repeated_bellman(seed, discount, k):
    mdp = random_mdp(seed, discount=discount)
    policy = random_policy(seed)
    v = np.random.default_rng(seed).uniform(-1, 1, size=mdp.n_states)
    expected = v
    for _ in range(k):
        expected = bellman_operator(mdp, policy, expected)
    np.testing.assert_allclose(k_step_bellman(mdp, policy, v, k), expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    seed=seeds,
    discount=discounts,
    k1=st.integers(min_value=1, max_value=5),
    k2=st.integers(min_value=1, max_value=5),
)
def test_k_step_composition(seed, discount, k1, k2):
    mdp = random_mdp(seed, discount=discount)
    policy = random_policy(seed)
    v = np.random.default_rng(seed).uniform(-1, 1, size=mdp.n_states)
    composed = k_step_bellman(mdp, policy, k_step_bellman(mdp, policy, v, k1), k2)
    np.testing.assert_allclose(k_step_bellman(mdp, policy, v, k1 + k2), composed, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, discount=discounts, n=st.integers(min_value=1, max_value=8))
def test_n_step_operator_identity(seed, discount, n):
    """T^n v = sum_{j<n} gamma^j P^j r + gamma^n P^n v"""
    mdp = random_mdp(seed, discount=discount)
    policy = random_policy(seed)
    v = np.random.default_rng(seed).uniform(-1, 1, size=mdp.n_states)
    r_pi = policy_reward(mdp, policy)
    expected = sum(
        discount**j * transition_operator_k(mdp, policy, r_pi, j) for j in range(n)
    ) + discount**n * transition_operator_k(mdp, policy, v, n)
    np.testing.assert_allclose(k_step_bellman(mdp, policy, v, n), expected, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, discount=discounts)
def test_bellman_is_gamma_contraction(seed, discount):
    mdp = random_mdp(seed, discount=discount)
    policy = random_policy(seed)
    rng = np.random.default_rng(seed)
    v, w = rng.uniform(-5, 5, size=(2, mdp.n_states))
    gap = sup_norm(bellman_operator(mdp, policy, v) - bellman_operator(mdp, policy, w))
    assert gap <= discount * sup_norm(v - w) + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=seeds, discount=discounts)
def test_value_is_fixed_point(seed, discount):
    mdp = random_mdp(seed, discount=discount)
    policy = random_policy(seed)
    v = policy_evaluation(mdp, policy)
    np.testing.assert_allclose(bellman_operator(mdp, policy, v), v, atol=1e-9)
    np.testing.assert_allclose(k_step_bellman(mdp, policy, v, 5), v, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, discount=discounts)
def test_weighted_norm_below_sup_norm(seed, discount):
    mdp = random_mdp(seed, discount=discount)
    d = stationary_distribution(mdp, random_policy(seed))
    x = np.random.default_rng(seed).normal(size=mdp.n_states)
    assert weighted_norm(x, d) <= sup_norm(x) + 1e-12


def test_exact_and_iterative_evaluation_agree(mdp, policy):
    exact = policy_evaluation(mdp, policy, method="exact")
    iterative = policy_evaluation(mdp, policy, method="iterative", tol=1e-12)
    np.testing.assert_allclose(exact, iterative, atol=1e-9)


def test_evaluation_rejects_unknown_method(mdp, policy):
    with pytest.raises(ArgumentError):
        policy_evaluation(mdp, policy, method="monte-carlo")


def test_k_must_be_positive(mdp, policy):
    with pytest.raises(ArgumentError):
        k_step_bellman(mdp, policy, np.zeros(mdp.n_states), 0)
    np.testing.assert_array_equal(
        transition_operator_k(mdp, policy, np.arange(4.0), 0), np.arange(4.0)
    )


def test_shape_mismatch_raises(mdp, policy):
    with pytest.raises(ShapeError):
        bellman_operator(mdp, policy, np.zeros(mdp.n_states + 1))
    with pytest.raises(ShapeError):
        bellman_operator(mdp, Policy.uniform(3, 2), np.zeros(mdp.n_states))


def test_stationary_distribution_is_invariant(mdp, policy):
    d = stationary_distribution(mdp, policy, teleport_eps=0.0)
    assert d.sum() == pytest.approx(1.0)
    assert np.all(d > 0)
    np.testing.assert_allclose(d @ policy_transition(mdp, policy), d, atol=1e-10)


def three_ring():
    transition = np.zeros((1, 3, 3))
    transition[0, [0, 1, 2], [1, 2, 0]] = 1.0
    return TabularMdp(np.zeros((3, 1)), transition, 0.9)


def test_transition_operator_on_ring():
    """One step moves the indicator of s1 back to its predecessor"""
    ring, policy = three_ring(), Policy.uniform(3, 1)
    x = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(transition_operator_k(ring, policy, x, 1), [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(transition_operator_k(ring, policy, x, 3), x)


def test_teleport_ring_is_uniform():
    d = stationary_distribution(three_ring(), Policy.uniform(3, 1), teleport_eps=0.01)
    np.testing.assert_allclose(d, np.full(3, 1 / 3), atol=1e-10)


def test_weighted_norm_example():
    assert weighted_norm(np.array([3.0, 4.0]), np.array([0.5, 0.5])) == pytest.approx(np.sqrt(12.5))


def test_stationary_distribution_rejects_large_teleport(mdp, policy):
    with pytest.raises(ArgumentError):
        stationary_distribution(mdp, policy, teleport_eps=0.5)


def test_greedy_ties_go_to_lowest_action():
    transition = np.stack([np.eye(2), np.eye(2)])
    mdp = TabularMdp(np.ones((2, 2)), transition, 0.9)
    assert greedy_policy(mdp, np.zeros(2)).actions().tolist() == [0, 0]


def test_value_iteration_matches_policy_iteration(mdp):
    v_vi, pi_vi = value_iteration(mdp)
    v_pi, pi_pi = policy_iteration(mdp)
    np.testing.assert_allclose(v_vi, v_pi, atol=1e-8)
    np.testing.assert_allclose(policy_evaluation(mdp, pi_vi), v_pi, atol=1e-8)


def test_value_iteration_dominates_random_policies():
    mdp = random_mdp(7, n_states=5, n_actions=3)
    v_star, _ = value_iteration(mdp)
    rng = np.random.default_rng(7)
    for _ in range(100):
        policy = Policy.from_actions(rng.integers(0, 3, size=5), 3)
        assert np.all(policy_evaluation(mdp, policy) <= v_star + 1e-8)


def test_policy_from_actions():
    policy = Policy.from_actions([1, 0, 1], 2)
    assert policy.is_deterministic
    assert policy.actions().tolist() == [1, 0, 1]
    assert not Policy.uniform(3, 2).is_deterministic
    with pytest.raises(ArgumentError):
        Policy.from_actions([2], 2)
