"""
Environment and proof-fixture builders: Four Rooms, ring / false-ring pairs,
the superfluous-state product and its y0 models, and the deterministic vs
stochastic counterexample pair.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from src.config import DEFAULT_DISCOUNT, DEFAULT_SLIP
from src.exceptions import ArgumentError, ConsistencyError
from src.mdp_core import Policy, TabularMdp, policy_evaluation

logger = logging.getLogger(__name__)

# '#' is wall, '.' is open. 11x11 interior, 104 open cells.
FOUR_ROOMS_MAP = (
    "#############",
    "#.....#.....#",
    "#.....#.....#",
    "#...........#",
    "#.....#.....#",
    "#.....#.....#",
    "##.####.....#",
    "#.....###.###",
    "#.....#.....#",
    "#.....#.....#",
    "#...........#",
    "#.....#.....#",
    "#############",
)

# up, right, down, left
DIRECTIONS = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class FourRoomsLayout:
    cells: tuple[tuple[int, int], ...]
    goal: tuple[int, int]

    @property
    def n_states(self) -> int:
        return len(self.cells)

    def state_of(self, cell: tuple[int, int]) -> int:
        return self.cells.index(cell)

    def cell_of(self, state: int) -> tuple[int, int]:
        return self.cells[state]

    @property
    def goal_state(self) -> int:
        return self.state_of(self.goal)

    def corner_state(self, name: str) -> int:
        """Open cell in a named corner: top-left, top-right, bottom-left or bottom-right."""
        rows = [r for r, _ in self.cells]
        cols = [c for _, c in self.cells]
        vertical, _, horizontal = name.partition("-")
        row = min(rows) if vertical == "top" else max(rows)
        col = min(cols) if horizontal == "left" else max(cols)
        if (row, col) not in self.cells or vertical not in ("top", "bottom"):
            raise ArgumentError(f"no open cell at corner {name!r}")
        return self.state_of((row, col))

    def is_adjacent_or_same(self, s: int, s_next: int) -> bool:
        (r0, c0), (r1, c1) = self.cells[s], self.cells[s_next]
        return abs(r0 - r1) + abs(c0 - c1) <= 1


def four_rooms_layout() -> FourRoomsLayout:
    cells = tuple(
        (r, c)
        for r, line in enumerate(FOUR_ROOMS_MAP)
        for c, ch in enumerate(line)
        if ch == "."
    )
    top = min(r for r, _ in cells)
    goal = max((cell for cell in cells if cell[0] == top), key=lambda cell: cell[1])
    return FourRoomsLayout(cells=cells, goal=goal)


def build_four_rooms(
    slip: float = DEFAULT_SLIP,
    discount: float = DEFAULT_DISCOUNT,
    slip_includes_intended: bool = True,
) -> TabularMdp:
    """Stochastic Four Rooms gridworld (104 states, 4 actions).

    With probability 1 - slip the intended move happens; otherwise a random
    cardinal direction is taken (uniform over all four, or over the other three when
    ``slip_includes_intended`` is False). Moves into walls keep the agent in place.
    Any transition landing on the goal cell pays 1; the goal is not terminal.
    """
    if not (0.0 <= slip <= 1.0):
        raise ArgumentError(f"slip must lie in [0, 1], got {slip}")
    layout = four_rooms_layout()
    open_cells = set(layout.cells)
    n, n_actions = layout.n_states, len(DIRECTIONS)

    transition = np.zeros((n_actions, n, n))
    for s, (r, c) in enumerate(layout.cells):
        for a in range(n_actions):
            for d, (dr, dc) in enumerate(DIRECTIONS):
                if slip_includes_intended:
                    prob = (1.0 - slip) * (d == a) + slip / n_actions
                else:
                    prob = (1.0 - slip) if d == a else slip / (n_actions - 1)
                if prob == 0.0:
                    continue
                target = (r + dr, c + dc)
                s_next = layout.state_of(target) if target in open_cells else s
                transition[a, s, s_next] += prob

    reward = transition[:, :, layout.goal_state].T.copy()
    return TabularMdp(reward=reward, transition=transition, discount=discount)


@dataclass(frozen=True)
class RingSpec:
    """n-state, 1-action cycle paying g(i) on leaving state s_i (1-based)."""

    n: int
    g: tuple[float, ...]
    discount: float

    def __post_init__(self):
        if self.n < 1:
            raise ArgumentError(f"ring length must be >= 1, got {self.n}")
        if len(self.g) != self.n:
            raise ArgumentError(f"g must have {self.n} entries, got {len(self.g)}")

    @classmethod
    def from_function(cls, n: int, g: Callable[[int], float], discount: float) -> RingSpec:
        return cls(n=n, g=tuple(float(g(i)) for i in range(1, n + 1)), discount=discount)

    @classmethod
    def indicator(cls, n: int, k: int, discount: float) -> RingSpec:
        """g(i) = 1{i in [1, k]}."""
        return cls.from_function(n, lambda i: float(1 <= i <= k), discount)

    def n_step_returns(self) -> np.ndarray:
        """Discounted n-step return from every state of the ring."""
        g = np.asarray(self.g)
        discounts = self.discount ** np.arange(self.n)
        return np.array([np.dot(discounts, np.roll(g, -i)) for i in range(self.n)])


def build_ring(spec: RingSpec) -> TabularMdp:
    n = spec.n
    transition = np.zeros((1, n, n))
    transition[0, np.arange(n), (np.arange(n) + 1) % n] = 1.0
    reward = np.asarray(spec.g, dtype=np.float64).reshape(n, 1)
    return TabularMdp(reward=reward, transition=transition, discount=spec.discount)


def build_false_ring(spec: RingSpec, normalization: str = "n_step") -> TabularMdp:
    """Self-loop MDP whose rewards mimic the ring's discounted n-step returns.

    ``normalization="n_step"`` sets r(s_i) = r^n(s_i) / sum_{t<n} gamma^t;
    ``normalization="value"`` sets r(s_i) = (1 - gamma) v_pi(s_i).
    """
    if not (0.0 < spec.discount < 1.0):
        raise ArgumentError(f"false-ring needs discount in (0, 1), got {spec.discount}")
    if normalization == "n_step":
        reward = spec.n_step_returns() / np.sum(spec.discount ** np.arange(spec.n))
    elif normalization == "value":
        ring_values = policy_evaluation(build_ring(spec), Policy.uniform(spec.n, 1))
        reward = (1.0 - spec.discount) * ring_values
    else:
        raise ArgumentError(f"unknown normalization: {normalization}")
    transition = np.eye(spec.n)[None, :, :]
    return TabularMdp(
        reward=reward.reshape(spec.n, 1), transition=transition, discount=spec.discount
    )


@dataclass(frozen=True)
class FactoredState:
    """State (x, y) of a product X x Y, flattened x-major: s = x * |Y| + y."""

    x: int
    y: int

    def flatten(self, y_size: int) -> int:
        if not (0 <= self.y < y_size) or self.x < 0:
            raise ArgumentError(f"({self.x}, {self.y}) is not in X x Y with |Y| = {y_size}")
        return self.x * y_size + self.y

    @classmethod
    def unflatten(cls, s: int, y_size: int) -> FactoredState:
        if s < 0:
            raise ArgumentError(f"state index must be non-negative, got {s}")
        return cls(x=s // y_size, y=s % y_size)


@dataclass(frozen=True, eq=False)
class ProductMdp(TabularMdp):
    """TabularMdp over X x Y that remembers its factorization."""

    y_size: int = 2

    @property
    def x_size(self) -> int:
        return self.n_states // self.y_size

    def state(self, x: int, y: int) -> int:
        return FactoredState(x, y).flatten(self.y_size)

    def factor(self, s: int) -> FactoredState:
        if not (0 <= s < self.n_states):
            raise ArgumentError(f"state {s} out of range")
        return FactoredState.unflatten(s, self.y_size)

    def x_marginal(self) -> np.ndarray:
        """p(x' | (x, y), a), shape [n_actions, n_states, x_size]."""
        return self.transition.reshape(
            self.n_actions, self.n_states, self.x_size, self.y_size
        ).sum(axis=3)


def build_superfluous_product(
    base: TabularMdp, y_size: int, y_dynamics: np.ndarray | None = None
) -> ProductMdp:
    """Product of ``base`` with an irrelevant factor y that follows its own kernel."""
    if y_size < 2:
        raise ArgumentError(f"the superfluous factor needs |Y| > 1, got {y_size}")
    if y_dynamics is None:
        y_dynamics = np.full((y_size, y_size), 1.0 / y_size)
    y_dynamics = np.asarray(y_dynamics, dtype=np.float64)
    if y_dynamics.shape != (y_size, y_size):
        raise ArgumentError(f"y_dynamics must be {y_size}x{y_size}, got {y_dynamics.shape}")

    transition = np.stack([np.kron(base.transition[a], y_dynamics) for a in range(base.n_actions)])
    reward = np.repeat(base.reward, y_size, axis=0)
    return ProductMdp(reward=reward, transition=transition, discount=base.discount, y_size=y_size)


def lift_policy(base_policy: Policy, y_size: int) -> Policy:
    """Policy on X x Y that ignores y."""
    return Policy(np.repeat(base_policy.probs, y_size, axis=0))


def build_y0_model(env: ProductMdp, y0: int) -> ProductMdp:
    """Model keeping rewards and the x-marginal but sending y' to y0 deterministically."""
    if not isinstance(env, ProductMdp):
        raise ArgumentError("build_y0_model needs an MDP built by build_superfluous_product")
    if not (0 <= y0 < env.y_size):
        raise ArgumentError(f"y0 must lie in [0, {env.y_size}), got {y0}")
    transition = np.zeros_like(env.transition)
    x_targets = [env.state(x, y0) for x in range(env.x_size)]
    transition[:, :, x_targets] = env.x_marginal()
    return ProductMdp(
        reward=env.reward, transition=transition, discount=env.discount, y_size=env.y_size
    )


def _det_stoch_pair(stay_prob: float, discount: float) -> tuple[TabularMdp, TabularMdp]:
    # actions: 0 = L, 1 = R; states s1, s2, s3 (s3 absorbing, zero reward)
    reward = np.zeros((3, 2))
    reward[0, 0] = 1.0

    env_transition = np.zeros((2, 3, 3))
    env_transition[0, 0, 0] = 1.0  # s1 --L--> s1, reward 1
    env_transition[1, 0, 1] = 1.0  # s1 --R--> s2
    env_transition[0, 1, 0] = 1.0  # s2 --L--> s1
    env_transition[1, 1, 2] = 1.0  # s2 --R--> s3
    env_transition[:, 2, 2] = 1.0

    model_transition = env_transition.copy()
    model_transition[1, 1] = [0.0, stay_prob, 1.0 - stay_prob]

    return (
        TabularMdp(reward, env_transition, discount),
        TabularMdp(reward, model_transition, discount),
    )


def max_deterministic_value_gap(env: TabularMdp, model: TabularMdp) -> float:
    gap = 0.0
    for actions in itertools.product(range(env.n_actions), repeat=env.n_states):
        policy = Policy.from_actions(actions, env.n_actions)
        diff = policy_evaluation(env, policy) - policy_evaluation(model, policy)
        gap = max(gap, float(np.max(np.abs(diff))))
    return gap


def build_det_stoch_counterexample(
    discount: float = 0.9, stay_probs: Sequence[float] = (0.5, 0.25, 0.75)
) -> tuple[TabularMdp, TabularMdp]:
    """Three-state, two-action env/model pair that only differs on action R from s2.

    Every deterministic policy has identical values in both; the uniform random
    policy does not. The first member of the family passing both checks is returned.

    Raises:
        ConsistencyError: if no member of the family passes.
    """
    uniform = Policy.uniform(3, 2)
    for stay_prob in stay_probs:
        env, model = _det_stoch_pair(stay_prob, discount)
        det_gap = max_deterministic_value_gap(env, model)
        stoch_gap = float(
            np.max(np.abs(policy_evaluation(env, uniform) - policy_evaluation(model, uniform)))
        )
        logger.debug(
            "det/stoch pair stay_prob=%s: det gap %.3e, uniform gap %.3e",
            stay_prob, det_gap, stoch_gap,
        )
        if det_gap < 1e-10 and stoch_gap > 1e-8:
            return env, model
    raise ConsistencyError("no member of the det/stoch family separates stochastic policies")


def _four_rooms(slip=DEFAULT_SLIP, discount=DEFAULT_DISCOUNT, slip_includes_intended=True, **_):
    return build_four_rooms(slip, discount, slip_includes_intended)


def _det_stoch_env(discount=0.9, **_):
    return build_det_stoch_counterexample(discount)[0]


ENVIRONMENTS: dict[str, Callable[..., TabularMdp]] = {
    "four_rooms": _four_rooms,
    "det_stoch_env": _det_stoch_env,
}


def get_environment(name: str, **kwargs) -> TabularMdp:
    """Build a named environment; keyword arguments a builder does not use are ignored."""
    builder = ENVIRONMENTS.get(name.lower())
    if builder is None:
        raise ArgumentError(f"unknown environment {name!r}; known: {sorted(ENVIRONMENTS)}")
    return builder(**kwargs)


def environment_for(config) -> TabularMdp:
    """The environment an ExperimentConfig names, built with its slip and discount."""
    return get_environment(
        config.environment,
        slip=config.slip,
        discount=config.discount,
        slip_includes_intended=config.slip_includes_intended,
    )
