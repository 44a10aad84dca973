"""
Learnable tabular models, the order-k VE and PVE losses, their exact gradients
and the Adam training loop.

Gradients are obtained by reverse accumulation through the k operator
applications, the policy mixing and the row softmaxes. Environment-side targets
are computed once per dataset and never differentiated.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from src.config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_DISCOUNT
from src.exceptions import ArgumentError, DivergenceError, ShapeError
from src.mdp_core import Policy, TabularMdp, policy_evaluation
from src.seeding import derive_rng, derive_seed

logger = logging.getLogger(__name__)

TARGET_CHUNK = 256


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PolicyValueDataset:
    """Policies ``[N, S, A]`` paired with state functions ``[N, S]``.

    ``mode="functions"`` holds arbitrary functions (order-k VE);
    ``mode="values"`` holds each policy's exact value function (PVE).
    """

    policies: NDArray[np.float64]
    functions: NDArray[np.float64]
    mode: Literal["functions", "values"] = "functions"

    def __post_init__(self):
        policies = np.array(self.policies, dtype=np.float64)
        functions = np.array(self.functions, dtype=np.float64)
        if policies.ndim != 3 or functions.ndim != 2:
            raise ShapeError("dataset needs policies [N, S, A] and functions [N, S]")
        if policies.shape[:2] != functions.shape:
            raise ShapeError(
                f"policies {policies.shape} and functions {functions.shape} disagree"
            )
        if self.mode not in ("functions", "values"):
            raise ArgumentError(f"unknown dataset mode {self.mode!r}")
        policies.flags.writeable = False
        functions.flags.writeable = False
        object.__setattr__(self, "policies", policies)
        object.__setattr__(self, "functions", functions)

    def __len__(self) -> int:
        return self.policies.shape[0]

    @property
    def n_states(self) -> int:
        return self.policies.shape[1]

    @property
    def n_actions(self) -> int:
        return self.policies.shape[2]

    def subset(self, index) -> PolicyValueDataset:
        return PolicyValueDataset(self.policies[index], self.functions[index], self.mode)

    def pairs(self) -> Iterator[tuple[Policy, NDArray[np.float64]]]:
        for probs, values in zip(self.policies, self.functions):
            yield Policy(probs), values

    def validate_values(self, env: TabularMdp, atol: float = 1e-8) -> None:
        """Raise ArgumentError unless every label is its policy's exact value."""
        if self.mode != "values":
            raise ArgumentError("dataset is not value-labeled")
        for i, (policy, values) in enumerate(self.pairs()):
            if np.max(np.abs(policy_evaluation(env, policy) - values)) > atol:
                raise ArgumentError(f"pair {i} is not labeled with its policy's value")


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


def softmax_rows(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _softmax_backward(probs: NDArray[np.float64], grad_probs: NDArray[np.float64]):
    return probs * (grad_probs - np.sum(grad_probs * probs, axis=-1, keepdims=True))


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Unconstrained parameters of a tabular model.

    Full mode keeps one logit tensor ``trans_logits [A, S, S]``. Low-rank mode keeps
    ``d_logits [A, S, rank]`` and ``k_logits [A, rank, S]``; the realized
    P_a = softmax(D_a) @ softmax(K_a) then has rank at most ``rank``.
    """

    reward: NDArray[np.float64]
    discount: float = DEFAULT_DISCOUNT
    rank: int | str = "full"
    trans_logits: NDArray[np.float64] | None = None
    d_logits: NDArray[np.float64] | None = None
    k_logits: NDArray[np.float64] | None = None

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def is_low_rank(self) -> bool:
        return self.rank != "full"

    def arrays(self) -> dict[str, NDArray[np.float64]]:
        if self.is_low_rank:
            names: tuple[str, ...] = ("reward", "d_logits", "k_logits")
        else:
            names = ("reward", "trans_logits")
        return {name: getattr(self, name) for name in names}

    def with_arrays(self, arrays: dict[str, NDArray[np.float64]]) -> ModelParams:
        return replace(self, **arrays)

    @classmethod
    def from_arrays(
        cls, arrays: dict[str, NDArray[np.float64]], discount: float = DEFAULT_DISCOUNT
    ) -> ModelParams:
        """Rebuild parameters from ``arrays()`` output; the rank is read off the factor shapes."""
        if "trans_logits" in arrays:
            return cls(arrays["reward"], discount, "full", trans_logits=arrays["trans_logits"])
        d_logits = arrays["d_logits"]
        return cls(
            arrays["reward"], discount, int(d_logits.shape[2]),
            d_logits=d_logits, k_logits=arrays["k_logits"],
        )

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def flat(self) -> NDArray[np.float64]:
        return np.concatenate([a.ravel() for a in self.arrays().values()])

    def from_flat(self, flat: NDArray[np.float64]) -> ModelParams:
        out, offset = {}, 0
        for name, array in self.arrays().items():
            out[name] = np.asarray(flat[offset : offset + array.size]).reshape(array.shape).copy()
            offset += array.size
        return self.with_arrays(out)


def init_params(
    n_states: int,
    n_actions: int,
    rank: int | str = "full",
    rng_seed: int = 0,
    discount: float = DEFAULT_DISCOUNT,
) -> ModelParams:
    """Rewards ~ U(-1, 1), every transition logit ~ U(-5, 5); deterministic in the seed."""
    if rank != "full" and not (isinstance(rank, (int, np.integer)) and 1 <= rank <= n_states):
        raise ArgumentError(f"rank must be 'full' or an integer in [1, {n_states}], got {rank!r}")
    rng = np.random.default_rng(rng_seed)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    if rank == "full":
        return ModelParams(
            reward=reward,
            discount=discount,
            rank="full",
            trans_logits=rng.uniform(-5.0, 5.0, size=(n_actions, n_states, n_states)),
        )
    rank = int(rank)
    return ModelParams(
        reward=reward,
        discount=discount,
        rank=rank,
        d_logits=rng.uniform(-5.0, 5.0, size=(n_actions, n_states, rank)),
        k_logits=rng.uniform(-5.0, 5.0, size=(n_actions, rank, n_states)),
    )


@dataclass
class _Realized:
    reward: NDArray[np.float64]
    transition: NDArray[np.float64]
    discount: float
    d: NDArray[np.float64] | None = None
    k: NDArray[np.float64] | None = None


def _realize(params: ModelParams) -> _Realized:
    if params.is_low_rank:
        d = softmax_rows(params.d_logits)
        k = softmax_rows(params.k_logits)
        return _Realized(params.reward, d @ k, params.discount, d, k)
    return _Realized(params.reward, softmax_rows(params.trans_logits), params.discount)


def realize_model(params: ModelParams) -> TabularMdp:
    """Tabular model: softmax rows (full) or a product of two row-stochastic factors."""
    realized = _realize(params)
    return TabularMdp(realized.reward, realized.transition, realized.discount)


def _as_realized(model: ModelParams | TabularMdp) -> _Realized:
    if isinstance(model, ModelParams):
        return _realize(model)
    return _Realized(model.reward, model.transition, model.discount)


# --------------------------------------------------------------------------
# Losses and gradients
# --------------------------------------------------------------------------


def _mix(policies, reward, transition):
    r_pi = np.einsum("bsa,sa->bs", policies, reward)
    p_pi = np.einsum("bsa,ast->bst", policies, transition)
    return r_pi, p_pi


def _apply_k(r_pi, p_pi, start, k: int, discount: float) -> list[NDArray[np.float64]]:
    iterates = [start]
    u = start
    for _ in range(k):
        u = r_pi + discount * np.einsum("bst,bt->bs", p_pi, u)
        iterates.append(u)
    return iterates


def environment_targets(
    env: TabularMdp, dataset: PolicyValueDataset, k: int, chunk: int = TARGET_CHUNK
) -> NDArray[np.float64]:
    """T_pi^k v for every (pi, v) in the dataset, in chunks to bound memory."""
    if k < 1:
        raise ArgumentError(f"k must be a positive integer, got {k}")
    out = np.empty_like(dataset.functions)
    for lo in range(0, len(dataset), chunk):
        hi = min(lo + chunk, len(dataset))
        r_pi, p_pi = _mix(dataset.policies[lo:hi], env.reward, env.transition)
        out[lo:hi] = _apply_k(r_pi, p_pi, dataset.functions[lo:hi], k, env.discount)[-1]
    return out


@dataclass(frozen=True, eq=False)
class LossSpec:
    """Which loss to evaluate: kind, environment, batch, k and cached env targets."""

    kind: Literal["ve", "pve"]
    env: TabularMdp
    batch: PolicyValueDataset
    k: int = 1
    targets: NDArray[np.float64] | None = None

    def __post_init__(self):
        if self.kind not in ("ve", "pve"):
            raise ArgumentError(f"unknown loss kind {self.kind!r}")
        if self.k < 1:
            raise ArgumentError(f"k must be a positive integer, got {self.k}")
        if len(self.batch) == 0:
            raise ArgumentError("empty batch")
        if self.kind == "pve" and self.batch.mode != "values":
            raise ArgumentError("the PVE loss needs a value-labeled batch")

    def resolved_targets(self) -> NDArray[np.float64]:
        if self.targets is not None:
            return self.targets
        if self.kind == "pve":
            return self.batch.functions
        return environment_targets(self.env, self.batch, self.k)


def _loss_and_realized_grad(realized: _Realized, spec: LossSpec, need_grad: bool):
    policies = spec.batch.policies
    targets = spec.resolved_targets()
    n_batch, n_states = targets.shape
    r_pi, p_pi = _mix(policies, realized.reward, realized.transition)
    iterates = _apply_k(r_pi, p_pi, spec.batch.functions, spec.k, realized.discount)
    residual = iterates[-1] - targets
    loss = float(np.mean(residual**2))
    if not need_grad:
        return loss, None, None

    gamma = realized.discount
    g = 2.0 * residual / (n_batch * n_states)
    grad_r_pi = np.zeros_like(r_pi)
    grad_p_pi = np.zeros_like(p_pi)
    for j in range(spec.k, 0, -1):
        grad_r_pi += g
        grad_p_pi += gamma * np.einsum("bs,bt->bst", g, iterates[j - 1])
        g = gamma * np.einsum("bst,bs->bt", p_pi, g)

    grad_reward = np.einsum("bsa,bs->sa", policies, grad_r_pi)
    grad_transition = np.einsum("bsa,bst->ast", policies, grad_p_pi)
    return loss, grad_reward, grad_transition


def _param_grad(
    params: ModelParams, realized: _Realized, grad_reward, grad_transition
) -> ModelParams:
    if params.is_low_rank:
        grad_d = np.einsum("ast,art->asr", grad_transition, realized.k)
        grad_k = np.einsum("asr,ast->art", realized.d, grad_transition)
        return params.with_arrays(
            {
                "reward": grad_reward,
                "d_logits": _softmax_backward(realized.d, grad_d),
                "k_logits": _softmax_backward(realized.k, grad_k),
            }
        )
    return params.with_arrays(
        {
            "reward": grad_reward,
            "trans_logits": _softmax_backward(realized.transition, grad_transition),
        }
    )


def evaluate_loss(model: ModelParams | TabularMdp, spec: LossSpec) -> float:
    return _loss_and_realized_grad(_as_realized(model), spec, need_grad=False)[0]


def loss_and_gradient(params: ModelParams, spec: LossSpec) -> tuple[float, ModelParams]:
    realized = _realize(params)
    loss, grad_reward, grad_transition = _loss_and_realized_grad(realized, spec, need_grad=True)
    return loss, _param_grad(params, realized, grad_reward, grad_transition)


def loss_gradient(params: ModelParams, loss_spec: LossSpec) -> ModelParams:
    """Exact gradient of the loss with respect to every unconstrained parameter."""
    return loss_and_gradient(params, loss_spec)[1]


def order_k_ve_loss(
    params: ModelParams | TabularMdp,
    env: TabularMdp,
    batch: PolicyValueDataset,
    k: int,
    targets: NDArray[np.float64] | None = None,
) -> float:
    """(1/|B|) sum over (pi, v) of mean_s (model T^k v - env T^k v)^2."""
    return evaluate_loss(params, LossSpec("ve", env, batch, k, targets))


def pve_loss(
    params: ModelParams | TabularMdp, env: TabularMdp, batch: PolicyValueDataset, k: int = 1
) -> float:
    """(1/|B|) sum over (pi, v_pi) of mean_s (model T^k v_pi - v_pi)^2."""
    return evaluate_loss(params, LossSpec("pve", env, batch, k))


# --------------------------------------------------------------------------
# Optimizer
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OptimizerState:
    first_moment: dict[str, NDArray[np.float64]]
    second_moment: dict[str, NDArray[np.float64]]
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros_like(cls, params: ModelParams, **hyper) -> OptimizerState:
        arrays = params.arrays()
        return cls(
            first_moment={name: np.zeros_like(a) for name, a in arrays.items()},
            second_moment={name: np.zeros_like(a) for name, a in arrays.items()},
            **hyper,
        )


def adam_step(
    state: OptimizerState, params: ModelParams, grad: ModelParams
) -> tuple[ModelParams, OptimizerState]:
    """One bias-corrected Adam update; returns new parameters and a new state."""
    step = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    grads = grad.arrays()
    for name, value in params.arrays().items():
        g = grads[name]
        if g.shape != value.shape or state.first_moment[name].shape != value.shape:
            raise ShapeError(f"gradient or moment for {name} does not match parameter shape")
        m = state.beta1 * state.first_moment[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.second_moment[name] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**step)
        v_hat = v / (1.0 - state.beta2**step)
        new_params[name] = value - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name], new_v[name] = m, v
    return params.with_arrays(new_params), replace(
        state, first_moment=new_m, second_moment=new_v, step=step
    )


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    loss: Literal["ve", "pve"] = "pve"
    k: int = 1
    rank: int | str = "full"
    iterations: int = 500_000
    learning_rate: float = 1e-3
    batch_size: int = 50
    snapshot_every: int = 1000
    seed: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS


@dataclass
class TrainingRun:
    snapshots: list[tuple[int, ModelParams]] = field(default_factory=list)
    losses: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    final_loss: float = float("nan")

    @property
    def final_params(self) -> ModelParams:
        return self.snapshots[-1][1]


def dataset_loss(
    params: ModelParams, env: TabularMdp, dataset: PolicyValueDataset, kind: str, k: int,
    targets: NDArray[np.float64] | None = None, chunk: int = TARGET_CHUNK,
) -> float:
    """Loss over a whole dataset, evaluated in chunks."""
    realized = _realize(params)
    total = 0.0
    for lo in range(0, len(dataset), chunk):
        hi = min(lo + chunk, len(dataset))
        spec = LossSpec(kind, env, dataset.subset(slice(lo, hi)), k,
                        None if targets is None else targets[lo:hi])
        total += _loss_and_realized_grad(realized, spec, need_grad=False)[0] * (hi - lo)
    return total / len(dataset)


def train(
    env: TabularMdp,
    config: TrainConfig,
    dataset: PolicyValueDataset,
    initial: ModelParams | None = None,
) -> TrainingRun:
    """Minibatch Adam on the order-k VE or PVE loss; deterministic given ``config.seed``.

    Raises:
        DivergenceError: if a minibatch loss becomes non-finite.
    """
    if len(dataset) == 0:
        raise ArgumentError("dataset must be nonempty")
    if config.loss == "pve" and dataset.mode != "values":
        raise ArgumentError("PVE training needs a value-labeled dataset")

    params = initial if initial is not None else init_params(
        env.n_states, env.n_actions, config.rank, derive_seed(config.seed, "init"), env.discount
    )
    state = OptimizerState.zeros_like(
        params, learning_rate=config.learning_rate,
        beta1=config.beta1, beta2=config.beta2, eps=config.eps,
    )
    targets = (
        dataset.functions if config.loss == "pve" else environment_targets(env, dataset, config.k)
    )
    batch_rng = derive_rng(config.seed, "batches")

    run = TrainingRun(snapshots=[(0, params)])
    losses = np.empty(config.iterations)
    last_finite = None
    for iteration in range(config.iterations):
        index = batch_rng.integers(0, len(dataset), size=config.batch_size)
        spec = LossSpec(config.loss, env, dataset.subset(index), config.k, targets[index])
        loss, grad = loss_and_gradient(params, spec)
        if not np.isfinite(loss):
            raise DivergenceError(iteration, last_finite)
        last_finite = loss
        losses[iteration] = loss
        params, state = adam_step(state, params, grad)
        if (iteration + 1) % config.snapshot_every == 0:
            run.snapshots.append((iteration + 1, params))
            logger.debug("iteration %d: minibatch loss %.3e", iteration + 1, loss)

    if run.snapshots[-1][0] != config.iterations:
        run.snapshots.append((config.iterations, params))
    run.losses = losses
    run.final_loss = dataset_loss(params, env, dataset, config.loss, config.k, targets)
    if not np.isfinite(run.final_loss):
        raise DivergenceError(config.iterations, last_finite, "non-finite final loss")
    logger.info(
        "trained %s k=%s rank=%s for %d iterations: final loss %.3e",
        config.loss, config.k, config.rank, config.iterations, run.final_loss,
    )
    return run


def trailing_window_means(losses: NDArray[np.float64], window: int) -> NDArray[np.float64]:
    """Means over consecutive non-overlapping windows (a trailing partial window is dropped)."""
    n_windows = len(losses) // window
    return np.asarray(losses[: n_windows * window]).reshape(n_windows, window).mean(axis=1)
