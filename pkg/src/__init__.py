"""pve-lab - Value-Equivalent Model Learning on Tabular MDPs"""

__version__ = "1.0.0"

from .environments import (
    ENVIRONMENTS,
    build_four_rooms,
    get_environment,
)
from .mdp_core import (
    Policy,
    TabularMdp,
    bellman_operator,
    k_step_bellman,
    policy_evaluation,
    value_iteration,
)

__all__ = [
    "ENVIRONMENTS",
    "build_four_rooms",
    "get_environment",
    "Policy",
    "TabularMdp",
    "bellman_operator",
    "k_step_bellman",
    "policy_evaluation",
    "value_iteration",
]
