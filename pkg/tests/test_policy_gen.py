"""
Tests for policy and dataset generation
"""

import numpy as np
import pytest

from src.exceptions import ArgumentError
from src.mdp_core import Policy, policy_evaluation, policy_iteration
from src.policy_gen import (
    DatasetSpec,
    augment_with_noise,
    build_dataset,
    concat_datasets,
    generate_pi_policies,
    label_with_values,
    sample_random_function,
    sample_random_policy,
)
from tests.conftest import random_mdp


def test_random_policies():
    rng = np.random.default_rng(0)
    det = sample_random_policy(rng, 5, 3, "det")
    stoch = sample_random_policy(rng, 5, 3, "stoch")
    assert det.is_deterministic
    assert not stoch.is_deterministic
    with pytest.raises(ArgumentError):
        sample_random_policy(rng, 5, 3, "greedy")


def test_random_function_range():
    values = sample_random_function(np.random.default_rng(0), 1000)
    assert values.min() >= -1.0 and values.max() < 1.0
    with pytest.raises(ArgumentError):
        sample_random_function(np.random.default_rng(0), 3, lo=1.0, hi=1.0)


def test_pi_policies_count_and_determinism():
    env = random_mdp(3, n_states=6, n_actions=3)
    first = generate_pi_policies(env, 25, seed=2)
    second = generate_pi_policies(env, 25, seed=2)
    assert len(first) == 25
    assert all(p.is_deterministic for p in first)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.probs, b.probs)


def test_pi_policies_improve_until_restart():
    """Consecutive stored policies within a run never get worse"""
    env = random_mdp(4, n_states=6, n_actions=3)
    _, optimal = policy_iteration(env)
    v_star = policy_evaluation(env, optimal)
    policies = generate_pi_policies(env, 40, update_fraction=0.2, seed=0)
    values = [policy_evaluation(env, p) for p in policies]
    for before, after in zip(values, values[1:]):
        if np.allclose(before, v_star, atol=1e-9):
            continue  # a new run may start here
        assert np.all(after >= before - 1e-9)
        assert np.any(after > before + 1e-12)


def test_noise_augmentation():
    policy = Policy.from_actions([0, 1, 2, 0, 1, 2, 0, 1, 2, 0], 3)
    rng = np.random.default_rng(0)
    stoch = augment_with_noise(policy, "stoch", 0.2, copies=5, rng=rng)
    det = augment_with_noise(policy, "det", 0.2, copies=5, rng=rng)
    assert len(stoch) == 5 and len(det) == 5
    for noisy in stoch:
        changed = np.any(noisy.probs != policy.probs, axis=1)
        assert changed.sum() == 2
        np.testing.assert_allclose(noisy.probs[changed], 1.0 / 3)
    for noisy in det:
        assert noisy.is_deterministic
        assert np.sum(noisy.actions() != policy.actions()) <= 2


def test_label_with_values():
    env = random_mdp(1)
    policies = [Policy.uniform(4, 2), Policy.from_actions([0, 1, 0, 1], 2)]
    dataset = label_with_values(env, policies)
    assert dataset.mode == "values"
    dataset.validate_values(env)
    with pytest.raises(ArgumentError):
        label_with_values(env, [])


def test_random_mixed_dataset():
    env = random_mdp(0)
    dataset = build_dataset(env, DatasetSpec(count=50, seed=3))
    assert len(dataset) == 50
    assert dataset.mode == "functions"
    deterministic = [Policy(p).is_deterministic for p in dataset.policies]
    assert 0 < sum(deterministic) < 50
    again = build_dataset(env, DatasetSpec(count=50, seed=3))
    np.testing.assert_array_equal(dataset.functions, again.functions)


@pytest.mark.parametrize("kind", ["pi-derived-stochastic", "pi-derived-deterministic"])
def test_pi_derived_dataset(kind):
    env = random_mdp(5, n_states=10, n_actions=3)
    dataset = build_dataset(env, DatasetSpec(count=25, kind=kind, augment_per_policy=10))
    assert len(dataset) == 25
    assert dataset.mode == "values"
    dataset.validate_values(env)
    all_det = all(Policy(p).is_deterministic for p in dataset.policies)
    assert all_det == (kind == "pi-derived-deterministic")


def test_dataset_spec_validation():
    with pytest.raises(ArgumentError):
        DatasetSpec(count=0)
    with pytest.raises(ArgumentError):
        DatasetSpec(count=5, kind="expert")


def test_concat_datasets():
    env = random_mdp(0)
    a = build_dataset(env, DatasetSpec(count=3, seed=1))
    b = build_dataset(env, DatasetSpec(count=2, seed=2))
    merged = concat_datasets([a, b])
    assert len(merged) == 5
    np.testing.assert_array_equal(merged.functions[3:], b.functions)
    labeled = build_dataset(env, DatasetSpec(count=2, label_values=True))
    with pytest.raises(ArgumentError):
        concat_datasets([a, labeled])
