"""Exact and learned uniform-policy valuation on tree-structured MDPs."""

from rover.exact import QTable, ValueTable, optimal_value, policy_value, theorem2_bound, uniform_q
from rover.policies import (
    PolicyTable,
    Trajectory,
    epsilon_greedy_from_q,
    greedy_from_q,
    sample_trajectory,
    softmax_from_q,
    uniform_policy,
)
from rover.tree import (
    RandomTreeParams,
    StateNode,
    TreeMdp,
    build_didactic_mdp,
    build_random_tree,
    step,
    terminal_reward,
)

__version__ = "0.1.0"
