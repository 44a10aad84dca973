"""
Exact checks on the constructed fixtures: ring / false-ring operator identities
and separations, order inclusion, PVE decomposition across k, the superfluous
y0 model and the deterministic vs stochastic pair.

Every check is reported as ``lhs <= rhs``; "value above threshold" checks put the
threshold on the left.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from src.analysis import random_dense_mdp
from src.environments import (
    RingSpec,
    build_det_stoch_counterexample,
    build_false_ring,
    build_ring,
    build_superfluous_product,
    build_y0_model,
    lift_policy,
)
from src.mdp_core import (
    Policy,
    TabularMdp,
    bellman_operator,
    k_step_bellman,
    policy_evaluation,
    sup_norm,
)
from src.model_learning import PolicyValueDataset, order_k_ve_loss, pve_loss
from src.policy_gen import label_with_values, sample_random_policy
from src.seeding import derive_rng

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-12
OPERATOR_TOL = 1e-9
SEPARATION = 1e-6


@dataclass(frozen=True)
class CheckResult:
    name: str
    lhs: float
    rhs: float
    passed: bool

    @classmethod
    def below(cls, name: str, value: float, bound: float) -> CheckResult:
        return cls(name, float(value), bound, bool(value < bound))

    @classmethod
    def above(cls, name: str, value: float, bound: float) -> CheckResult:
        return cls(name, bound, float(value), bool(value > bound))


def _single_action_policy(n: int) -> Policy:
    return Policy.uniform(n, 1)


def _constant_batch(n: int, constants=(0.0, 1.0, -1.0)) -> PolicyValueDataset:
    policies = np.ones((len(constants), n, 1))
    return PolicyValueDataset(policies, np.outer(constants, np.ones(n)))


def check_ring_operator_identity(seed: int, n_functions: int = 100) -> list[CheckResult]:
    """n-step operators of a ring and its false ring agree on random functions."""
    rng = derive_rng(seed, "ring-identity")
    results = []
    for n in (1, 3, 5, 8):
        spec = RingSpec(n, tuple(rng.uniform(-1.0, 1.0, size=n)), float(rng.uniform(0.1, 0.99)))
        ring, false_ring = build_ring(spec), build_false_ring(spec)
        policy = _single_action_policy(n)
        err = max(
            sup_norm(k_step_bellman(ring, policy, v, n) - k_step_bellman(false_ring, policy, v, n))
            for v in rng.uniform(-5.0, 5.0, size=(n_functions, n))
        )
        results.append(CheckResult.below(f"ring_identity_n{n}", err, OPERATOR_TOL))

        value_ring = build_false_ring(spec, normalization="value")
        err = sup_norm(policy_evaluation(ring, policy) - policy_evaluation(value_ring, policy))
        results.append(CheckResult.below(f"ring_value_match_n{n}", err, OPERATOR_TOL))
    return results


def check_ring_separation(discount: float = 0.9) -> list[CheckResult]:
    """For g = 1{i <= k}, k < K, the k-step operators differ at s_1 on constant functions."""
    results = []
    for K, k in ((2, 1), (4, 2), (6, 3), (6, 5)):
        spec = RingSpec.indicator(K, k, discount)
        ring, false_ring = build_ring(spec), build_false_ring(spec)
        policy = _single_action_policy(K)
        f = np.full(K, 0.5)
        gap = abs(
            k_step_bellman(ring, policy, f, k)[0] - k_step_bellman(false_ring, policy, f, k)[0]
        )
        results.append(CheckResult.above(f"ring_separation_K{K}_k{k}", gap, SEPARATION))
    return results


def check_order_witness(K: int = 6, discount: float = 0.9) -> list[CheckResult]:
    """The K-false-ring is order-K (and order-2K) VE to its ring, not order-k for k | K, k < K."""
    results = []
    for k in (d for d in range(1, K) if K % d == 0):
        spec = RingSpec.indicator(K, k, discount)
        ring, false_ring = build_ring(spec), build_false_ring(spec)
        batch = _constant_batch(K)

        def loss(order: int) -> float:
            return order_k_ve_loss(false_ring, ring, batch, order)

        results += [
            CheckResult.below(f"witness_K{K}_member_k{k}", loss(K), ZERO_TOL),
            CheckResult.below(f"witness_K{K}_inclusion_k{k}", loss(2 * K), 1e-10),
            CheckResult.above(f"witness_K{K}_excluded_k{k}", loss(k), SEPARATION),
        ]
    return results


def _superfluous_fixture(seed: int, y_size: int = 3, y0: int = 0):
    rng = derive_rng(seed, "superfluous")
    base = random_dense_mdp(rng, 3, 2, 0.9)
    env = build_superfluous_product(base, y_size)
    model = build_y0_model(env, y0)
    policies = [
        lift_policy(sample_random_policy(rng, base.n_states, base.n_actions, "stoch"), y_size)
        for _ in range(50)
    ]
    return env, model, label_with_values(env, policies)


def check_superfluous_model(seed: int, y_size: int = 3, y0: int = 0) -> list[CheckResult]:
    """The y0 model is PVE for y-ignoring policies but not order-1 VE."""
    env, model, dataset = _superfluous_fixture(seed, y_size, y0)
    spread = max(
        float(np.max(np.ptp(values.reshape(-1, y_size), axis=1))) for values in dataset.functions
    )
    indicator = np.array([float(env.factor(s).y != y0) for s in range(env.n_states)])
    policy = Policy(dataset.policies[0])
    gap = sup_norm(
        bellman_operator(env, policy, indicator) - bellman_operator(model, policy, indicator)
    )
    return [
        CheckResult.below("superfluous_values_constant_in_y", spread, 1e-8),
        CheckResult.below("superfluous_pve_member", pve_loss(model, env, dataset), ZERO_TOL),
        CheckResult.above("superfluous_order1_violation", gap, SEPARATION),
    ]


def check_det_stoch_pair() -> list[CheckResult]:
    env, model = build_det_stoch_counterexample()
    deterministic = [
        Policy.from_actions(actions, env.n_actions)
        for actions in itertools.product(range(env.n_actions), repeat=env.n_states)
    ]
    uniform = Policy.uniform(env.n_states, env.n_actions)
    det_gap = max(
        sup_norm(policy_evaluation(env, p) - policy_evaluation(model, p)) for p in deterministic
    )
    uniform_gap = sup_norm(policy_evaluation(env, uniform) - policy_evaluation(model, uniform))
    det_data = label_with_values(env, deterministic)
    all_data = label_with_values(env, deterministic + [uniform])
    return [
        CheckResult.below("det_stoch_deterministic_gap", det_gap, 1e-10),
        CheckResult.above("det_stoch_uniform_gap", uniform_gap, 1e-8),
        CheckResult.below("det_stoch_pve_deterministic", pve_loss(model, env, det_data), ZERO_TOL),
        CheckResult.above("det_stoch_pve_with_uniform", pve_loss(model, env, all_data), 1e-8),
    ]


def _zero_or_positive_together(
    name: str, model: TabularMdp, env: TabularMdp, data: PolicyValueDataset, k: int
) -> CheckResult:
    losses = (pve_loss(model, env, data, k), pve_loss(model, env, data, 2 * k))
    consistent = all(x < 1e-10 for x in losses) or all(x > 1e-8 for x in losses)
    return CheckResult(f"{name}_k{k}_vs_k{2 * k}", float(losses[0]), float(losses[1]), consistent)


def check_pve_decomposition(seed: int) -> list[CheckResult]:
    """PVE losses at k and 2k vanish together on the fixtures."""
    env, model, dataset = _superfluous_fixture(seed)
    det_env, det_model = build_det_stoch_counterexample()
    uniform = label_with_values(det_env, [Policy.uniform(det_env.n_states, det_env.n_actions)])
    spec = RingSpec.from_function(5, lambda i: float(i), 0.8)
    ring = build_ring(spec)
    ring_data = label_with_values(ring, [_single_action_policy(5)])
    results = []
    for k in (1, 2, 3):
        results.append(_zero_or_positive_together("pve_superfluous", model, env, dataset, k))
        results.append(_zero_or_positive_together("pve_det_stoch", det_model, det_env, uniform, k))
        results.append(
            _zero_or_positive_together(
                "pve_value_ring", build_false_ring(spec, "value"), ring, ring_data, k
            )
        )
    return results


def run_proposition_checks(seed: int = 0) -> list[CheckResult]:
    results = (
        check_ring_operator_identity(seed)
        + check_ring_separation()
        + check_order_witness()
        + check_superfluous_model(seed)
        + check_det_stoch_pair()
        + check_pve_decomposition(seed)
    )
    failed = [r.name for r in results if not r.passed]
    logger.info("%d proposition checks, %d failed %s", len(results), len(failed), failed or "")
    return results
