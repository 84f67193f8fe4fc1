"""Exhaustive checks of the uniform-Q optimality and softmax-bound results."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from rover.exact import optimal_value, policy_value, theorem2_bound, uniform_q, zero_mask
from rover.policies import greedy_from_q
from rover.tree import RandomTreeParams, TreeMdp, build_random_tree

DEFAULT_RHOS = (1.0, 1e-1, 1e-2, 1e-3)
EXACT_TOL = 1e-12


def theorem_tree_params(index: int) -> RandomTreeParams:
    """The random-tree family used by the optimality and bound suites: depth 1..5,
    branching 1..5, early leaves allowed, a rewarded leaf forced."""
    return RandomTreeParams(
        max_depth=1 + index % 5,
        branching=(1, 5),
        reward_leaf_fraction=0.3,
        early_stop=0.15,
        seed=index,
        force_reward=True,
    )


def enumerate_success(mdp: TreeMdp) -> dict[tuple[str, str], Fraction]:
    """Probability of ending on a rewarded leaf after each (s, a) when every
    later action is uniform, by explicit walk over all root-to-leaf paths."""
    out: dict[tuple[str, str], Fraction] = {}
    for node in mdp.nodes:
        for a, child in zip(node.actions, node.children):
            total = Fraction(0)
            stack = [(child, Fraction(1))]
            while stack:
                s, p = stack.pop()
                n = mdp.node(s)
                if n.is_terminal:
                    if n.terminal_reward > 0:
                        total += p
                    continue
                for c in n.children:
                    stack.append((c, p / len(n.children)))
            out[(node.id, a)] = total
    return out


def subtree_has_reward(mdp: TreeMdp) -> list[bool]:
    has = [False] * len(mdp)
    for i in mdp.postorder():
        kids = mdp.child_index[i]
        has[i] = any(has[j] for j in kids) if kids else mdp.nodes[i].terminal_reward > 0
    return has


@dataclass
class TreeCheck:
    index: int
    greedy_optimal: bool
    zero_characterization: bool
    bound_holds: dict[float, bool] = field(default_factory=dict)
    bounds: dict[float, float] = field(default_factory=dict)
    values: dict[float, float] = field(default_factory=dict)
    enumeration: bool | None = None


def check_tree(
    mdp: TreeMdp, index: int = 0, rhos=DEFAULT_RHOS, enumeration_leaf_cap: int = 10_000
) -> TreeCheck:
    q_exact = uniform_q(mdp, exact=True)
    greedy = greedy_from_q(mdp, q_exact.as_float())
    v_greedy = policy_value(mdp, greedy).root
    v_star = optimal_value(mdp).root
    t1 = abs(v_greedy - v_star) < EXACT_TOL

    has = subtree_has_reward(mdp)
    zeros = zero_mask(q_exact.values)
    zc = all(
        zeros[mdp.pair_offset[i] + k] == (not has[j])
        for i, kids in enumerate(mdp.child_index)
        for k, j in enumerate(kids)
    )
    check = TreeCheck(index, t1, zc)
    for rho in rhos:
        rep = theorem2_bound(mdp, q_exact, rho)
        check.bound_holds[rho] = rep.holds
        check.bounds[rho] = rep.bound
        check.values[rho] = rep.exact_value

    if len(mdp.leaves()) <= enumeration_leaf_cap:
        scale = Fraction(mdp.reward_scale)
        probs = enumerate_success(mdp)
        check.enumeration = all(
            q_exact[s, a] / scale == probs[(s, a)] for s, a in mdp.pairs()
        )
    return check


@dataclass
class SuiteReport:
    n_trees: int
    theorem1_violations: int
    zero_characterization_violations: int
    theorem2_violations: int
    limit_violations: int
    enumeration_checked: int
    enumeration_violations: int
    min_limit_bound: float
    limit_rho: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def run_suite(
    n_trees: int = 500,
    rhos=DEFAULT_RHOS,
    limit_fraction: float = 0.999,
    params_fn=theorem_tree_params,
) -> tuple[SuiteReport, list[TreeCheck]]:
    checks = []
    limit_rho = min(rhos)
    limit_viol = 0
    min_limit = float("inf")
    for k in range(n_trees):
        mdp = build_random_tree(params_fn(k))
        c = check_tree(mdp, k, rhos)
        checks.append(c)
        if mdp.rewarded_leaves():
            b = float(c.bounds[limit_rho] / mdp.reward_scale)
            min_limit = min(min_limit, b)
            limit_viol += int(b < limit_fraction)
    report = SuiteReport(
        n_trees=n_trees,
        theorem1_violations=sum(not c.greedy_optimal for c in checks),
        zero_characterization_violations=sum(not c.zero_characterization for c in checks),
        theorem2_violations=sum(not all(c.bound_holds.values()) for c in checks),
        limit_violations=limit_viol,
        enumeration_checked=sum(c.enumeration is not None for c in checks),
        enumeration_violations=sum(c.enumeration is False for c in checks),
        min_limit_bound=min_limit,
        limit_rho=limit_rho,
    )
    return report, checks
