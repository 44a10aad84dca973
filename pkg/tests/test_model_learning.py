"""
Tests for model parameterizations, the VE / PVE losses, gradients and training
"""

import itertools

import numpy as np
import pytest

from src.analysis import optimal_value_ratio
from src.environments import build_four_rooms
from src.exceptions import ArgumentError, DivergenceError, ShapeError
from src.mdp_core import Policy, TabularMdp, bellman_operator
from src.model_learning import (
    LossSpec,
    ModelParams,
    OptimizerState,
    PolicyValueDataset,
    TrainConfig,
    adam_step,
    dataset_loss,
    evaluate_loss,
    init_params,
    loss_and_gradient,
    loss_gradient,
    order_k_ve_loss,
    pve_loss,
    realize_model,
    train,
    trailing_window_means,
)
from src.policy_gen import DatasetSpec, build_dataset, label_with_values, sample_random_policy
from tests.conftest import random_mdp, random_policy


def function_batch(env, size=4, seed=0):
    rng = np.random.default_rng(seed)
    policies = np.stack([random_policy(seed + i, env.n_states, env.n_actions).probs
                         for i in range(size)])
    return PolicyValueDataset(policies, rng.uniform(-1, 1, size=(size, env.n_states)))


def finite_difference(params, spec, h=1e-5):
    flat = params.flat()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        plus = evaluate_loss(params.from_flat(flat + step), spec)
        minus = evaluate_loss(params.from_flat(flat - step), spec)
        grad[i] = (plus - minus) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("kind", ["ve", "pve"])
@pytest.mark.parametrize("rank", ["full", 2])
def test_gradient_matches_finite_differences(seed, k, kind, rank):
    env = random_mdp(seed, n_states=4, n_actions=2, discount=0.8)
    batch = function_batch(env, seed=seed)
    if kind == "pve":
        batch = label_with_values(env, [Policy(p) for p in batch.policies])
    params = init_params(4, 2, rank=rank, rng_seed=seed + 11, discount=0.8)
    spec = LossSpec(kind, env, batch, k)

    _, grad = loss_and_gradient(params, spec)
    numeric = finite_difference(params, spec)
    np.testing.assert_allclose(grad.flat(), numeric, rtol=1e-4, atol=1e-8)


def test_reward_gradient_by_chain_rule():
    """k = 1 PVE: d loss / d r(s, a) = 2 / (|B| |S|) * sum_b pi_b(a|s) residual_b(s)"""
    env = random_mdp(8, n_states=2, n_actions=2, discount=0.7)
    batch = label_with_values(env, [random_policy(i, 2, 2) for i in range(3)])
    params = init_params(2, 2, rng_seed=2, discount=0.7)
    model = realize_model(params)
    residual = np.stack([
        bellman_operator(model, policy, values) - values for policy, values in batch.pairs()
    ])
    expected = 2.0 / (3 * 2) * np.einsum("bsa,bs->sa", batch.policies, residual)
    grad = loss_gradient(params, LossSpec("pve", env, batch, 1))
    np.testing.assert_allclose(grad.reward, expected, atol=1e-12)


@pytest.mark.parametrize("kind", ["ve", "pve"])
def test_gradient_vanishes_at_the_environment(kind):
    env = random_mdp(9, n_states=3, n_actions=2, discount=0.8)
    batch = function_batch(env, seed=9)
    if kind == "pve":
        batch = label_with_values(env, [Policy(p) for p in batch.policies])
    params = ModelParams(
        env.reward.copy(), env.discount, "full", trans_logits=np.log(env.transition)
    )
    loss, grad = loss_and_gradient(params, LossSpec(kind, env, batch, 2))
    assert loss < 1e-24
    assert np.max(np.abs(grad.flat())) < 1e-10


def test_realized_rows_are_distributions():
    for rank in ("full", 1, 3):
        model = realize_model(init_params(5, 2, rank=rank, rng_seed=3))
        np.testing.assert_allclose(model.transition.sum(axis=2), 1.0)


def test_rank_one_model_ignores_state():
    model = realize_model(init_params(4, 2, rank=1, rng_seed=0))
    for a in range(2):
        np.testing.assert_allclose(model.transition[a], model.transition[a][[0]].repeat(4, 0))


def test_low_rank_transition_rank_is_bounded():
    model = realize_model(init_params(6, 2, rank=2, rng_seed=5))
    assert np.linalg.matrix_rank(model.transition[0], tol=1e-10) <= 2


def test_invalid_rank():
    with pytest.raises(ArgumentError):
        init_params(3, 2, rank=4)
    with pytest.raises(ArgumentError):
        init_params(3, 2, rank=0)


def test_init_is_deterministic():
    a, b = init_params(4, 2, rng_seed=9), init_params(4, 2, rng_seed=9)
    np.testing.assert_array_equal(a.flat(), b.flat())
    assert np.all(np.abs(a.reward) <= 1.0)
    assert np.all(np.abs(a.trans_logits) <= 5.0)


def test_from_arrays_recovers_rank():
    params = init_params(4, 2, rank=3, rng_seed=1)
    rebuilt = ModelParams.from_arrays(params.arrays(), params.discount)
    assert rebuilt.rank == 3
    assert rebuilt.n_parameters == 4 * 2 + 2 * 4 * 3 + 2 * 3 * 4


def test_environment_has_zero_losses(mdp):
    batch = function_batch(mdp)
    assert order_k_ve_loss(mdp, mdp, batch, k=3) < 1e-24
    labeled = label_with_values(mdp, [Policy(p) for p in batch.policies])
    assert pve_loss(mdp, mdp, labeled, k=2) < 1e-18


def test_loss_spec_validation(mdp):
    batch = function_batch(mdp)
    with pytest.raises(ArgumentError):
        LossSpec("pve", mdp, batch)
    with pytest.raises(ArgumentError):
        LossSpec("ve", mdp, batch, k=0)
    with pytest.raises(ArgumentError):
        LossSpec("ve", mdp, batch.subset(slice(0, 0)))


def test_dataset_copies_inputs():
    policies = np.full((1, 2, 2), 0.5)
    dataset = PolicyValueDataset(policies, np.zeros((1, 2)))
    assert policies.flags.writeable
    assert not dataset.policies.flags.writeable
    with pytest.raises(ShapeError):
        PolicyValueDataset(policies, np.zeros((1, 3)))


def test_validate_values(mdp):
    labeled = label_with_values(mdp, [random_policy(0)])
    labeled.validate_values(mdp)
    wrong = PolicyValueDataset(labeled.policies, labeled.functions + 1.0, "values")
    with pytest.raises(ArgumentError):
        wrong.validate_values(mdp)


def test_adam_first_step_moves_by_learning_rate():
    params = init_params(3, 2, rng_seed=0)
    grad = params.with_arrays({
        "reward": np.full((3, 2), 0.5),
        "trans_logits": np.full((2, 3, 3), -2.0),
    })
    state = OptimizerState.zeros_like(params, learning_rate=0.01)
    new_params, new_state = adam_step(state, params, grad)
    assert new_state.step == 1
    np.testing.assert_allclose(new_params.reward - params.reward, -0.01, rtol=1e-6)
    np.testing.assert_allclose(new_params.trans_logits - params.trans_logits, 0.01, rtol=1e-6)


def test_adam_shape_mismatch():
    params = init_params(3, 2, rng_seed=0)
    state = OptimizerState.zeros_like(params)
    with pytest.raises(ShapeError):
        adam_step(state, params, init_params(4, 2, rng_seed=0))


def test_zero_iterations_returns_initial_model(mdp):
    dataset = build_dataset(mdp, DatasetSpec(count=10, label_values=True))
    run = train(mdp, TrainConfig(iterations=0), dataset)
    assert [it for it, _ in run.snapshots] == [0]
    assert len(run.losses) == 0
    assert np.isfinite(run.final_loss)


def test_snapshots_end_at_last_iteration(mdp):
    dataset = build_dataset(mdp, DatasetSpec(count=10))
    run = train(mdp, TrainConfig(loss="ve", iterations=25, snapshot_every=10), dataset)
    assert [it for it, _ in run.snapshots] == [0, 10, 20, 25]
    assert run.losses.shape == (25,)


def test_training_reduces_pve_loss():
    env = random_mdp(2, n_states=2, n_actions=2, discount=0.5)
    dataset = build_dataset(env, DatasetSpec(count=20, seed=1, label_values=True))
    config = TrainConfig(loss="pve", iterations=300, learning_rate=0.05, batch_size=10)
    run = train(env, config, dataset)
    initial = dataset_loss(run.snapshots[0][1], env, dataset, "pve", 1)
    assert run.final_loss < 0.5 * initial


def test_training_is_deterministic(mdp):
    dataset = build_dataset(mdp, DatasetSpec(count=10))
    config = TrainConfig(loss="ve", k=2, iterations=20, seed=4)
    first, second = train(mdp, config, dataset), train(mdp, config, dataset)
    np.testing.assert_array_equal(first.final_params.flat(), second.final_params.flat())
    np.testing.assert_array_equal(first.losses, second.losses)


def test_pve_training_needs_values(mdp):
    dataset = build_dataset(mdp, DatasetSpec(count=5))
    with pytest.raises(ArgumentError):
        train(mdp, TrainConfig(loss="pve", iterations=1), dataset)


def test_non_finite_loss_raises_divergence(mdp):
    dataset = build_dataset(mdp, DatasetSpec(count=5))
    params = init_params(mdp.n_states, mdp.n_actions, discount=mdp.discount)
    broken = params.with_arrays({"reward": np.full_like(params.reward, np.nan)})
    with pytest.raises(DivergenceError) as info:
        train(mdp, TrainConfig(loss="ve", iterations=3), dataset, initial=broken)
    assert info.value.iteration == 0


def test_trailing_window_means():
    np.testing.assert_allclose(trailing_window_means(np.arange(1.0, 6.0), 2), [1.5, 3.5])


def test_trailing_window_loss_trend():
    """Small Adam steps on a noise-free loss: window means only go down"""
    env = random_mdp(12, n_states=3, n_actions=2, discount=0.6)
    dataset = build_dataset(env, DatasetSpec(count=1, seed=3, label_values=True))
    config = TrainConfig(loss="pve", iterations=500, learning_rate=2e-4, batch_size=4)
    means = trailing_window_means(train(env, config, dataset).losses, 50)
    assert means.shape == (10,)
    assert means[-1] < means[0]
    assert np.all(means[1:] <= 1.05 * means[:-1])
    assert np.all((means >= means[-1]) & (means <= means[0]))


def clear_choice_mdp(seed):
    """Action 0 pays at least 0.9 and action 1 at most 0.1, so all-zeros is the unique optimum"""
    rng = np.random.default_rng(seed)
    reward = np.stack([rng.uniform(0.9, 1.0, 3), rng.uniform(0.0, 0.1, 3)], axis=1)
    return TabularMdp(reward, rng.dirichlet(np.ones(3), size=(2, 3)), 0.5)


def test_pve_model_of_all_deterministic_policies_plans_optimally():
    env = clear_choice_mdp(21)
    policies = [Policy.from_actions(a, 2) for a in itertools.product(range(2), repeat=3)]
    dataset = label_with_values(env, policies)
    config = TrainConfig(
        loss="pve", iterations=3000, learning_rate=0.01, batch_size=8, snapshot_every=3000
    )
    run = train(env, config, dataset)
    assert run.final_loss < 1e-2
    assert optimal_value_ratio(env, realize_model(run.final_params)) >= 0.99


@pytest.mark.slow
def test_four_rooms_pve_model_plans_optimally():
    """Full-rank PVE on 2,000 random deterministic policies, 50k Adam steps"""
    env = build_four_rooms()
    rng = np.random.default_rng(0)
    policies = [sample_random_policy(rng, env.n_states, env.n_actions, "det") for _ in range(2000)]
    config = TrainConfig(
        loss="pve", iterations=50_000, learning_rate=1e-3, batch_size=50, snapshot_every=50_000
    )
    run = train(env, config, label_with_values(env, policies))
    assert optimal_value_ratio(env, realize_model(run.final_params)) >= 0.99
