from fractions import Fraction

import pytest

from rover.exact import theorem2_bound, uniform_q
from rover.theorems import (
    check_tree,
    enumerate_success,
    run_suite,
    subtree_has_reward,
    theorem_tree_params,
)
from rover.tree import RandomTreeParams, build_random_tree


def test_enumerate_success_on_didactic(didactic):
    probs = enumerate_success(didactic)
    assert probs[("", "B")] == Fraction(1, 16)
    assert probs[("BD", "C")] == 1


def test_check_tree_on_didactic(didactic):
    c = check_tree(didactic)
    assert c.greedy_optimal and c.zero_characterization and c.enumeration
    assert all(c.bound_holds.values())


def test_theorem_family_shape():
    for k in range(10):
        p = theorem_tree_params(k)
        assert p.max_depth <= 5 and p.branching[1] <= 5 and p.force_reward


def test_suite_small():
    report, checks = run_suite(n_trees=40)
    assert report.n_trees == len(checks) == 40
    assert report.theorem1_violations == 0
    assert report.zero_characterization_violations == 0
    assert report.theorem2_violations == 0
    assert report.enumeration_checked == 40 and report.enumeration_violations == 0


def test_subtree_has_reward(didactic):
    has = subtree_has_reward(didactic)
    assert has[didactic.index["AC"]] and not has[didactic.index["AA"]]


def sparse_tree(seed):
    return build_random_tree(
        RandomTreeParams(
            max_depth=1 + seed % 5,
            branching=(1, 5),
            reward_leaf_fraction=0.02,
            early_stop=0.15,
            seed=seed,
        )
    )


def test_limit_bound_can_fall_short_on_sparse_trees():
    # The bound at rho = 1e-3 is not above 0.999 R on every tree: when the
    # root's best uniform value is tiny, the zero-valued actions keep mass
    # of order N / (N + exp(maxQ / rho)). The exact softmax value still
    # respects the bound, and the bound still tends to R as rho shrinks.
    shortfalls = []
    for seed in range(500):
        mdp = sparse_tree(seed)
        rep = theorem2_bound(mdp, uniform_q(mdp, exact=True), 1e-3)
        assert rep.holds
        if rep.bound < 0.999 * mdp.reward_scale:
            shortfalls.append((seed, rep.bound))
    assert shortfalls
    assert 0.9 < min(b for _, b in shortfalls) < 0.999
    for seed, _ in shortfalls:
        mdp = sparse_tree(seed)
        assert theorem2_bound(mdp, uniform_q(mdp, exact=True), 1e-5).bound >= 0.999
