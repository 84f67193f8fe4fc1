import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rover.exact import (
    QTable,
    optimal_q,
    optimal_value,
    policy_value,
    reach_probabilities,
    theorem2_bound,
    uniform_q,
    zero_mask,
)
from rover.policies import greedy_from_q, softmax_from_q, uniform_policy
from rover.tree import RandomTreeParams, StateNode, TreeError, TreeMdp, build_random_tree

small_trees = st.builds(
    RandomTreeParams,
    max_depth=st.integers(1, 5),
    branching=st.just((1, 5)),
    reward_leaf_fraction=st.sampled_from([0.05, 0.3, 0.7]),
    seed=st.integers(0, 10**6),
    early_stop=st.sampled_from([0.0, 0.15]),
    reward_scale=st.sampled_from([1.0, 3.0]),
).map(build_random_tree)


def recursive_success(mdp, s) -> Fraction:
    """Probability of a rewarded leaf from s under uniform play, by plain recursion."""
    node = mdp.node(s)
    if node.is_terminal:
        return Fraction(int(node.terminal_reward > 0))
    return sum((recursive_success(mdp, c) for c in node.children), Fraction(0)) / len(
        node.children
    )


def recursive_optimum(mdp, s) -> float:
    node = mdp.node(s)
    if node.is_terminal:
        return node.terminal_reward
    return max(recursive_optimum(mdp, c) for c in node.children)


def test_didactic_uniform_q(didactic):
    q = uniform_q(didactic, exact=True)
    # Each first letter leads to exactly one rewarded leaf among 16.
    for a in "ABCD":
        assert q["", a] == Fraction(1, 16)
    assert q["A", "C"] == Fraction(1, 4)
    assert q["A", "A"] == 0
    assert q["AC", "D"] == 1
    assert q["AC", "B"] == 0


def test_float_matches_exact(didactic):
    qe = uniform_q(didactic, exact=True)
    qf = uniform_q(didactic)
    assert qe.is_exact and not qf.is_exact
    np.testing.assert_allclose(qe.as_float().values, qf.values, atol=1e-15)


@given(small_trees)
def test_uniform_q_matches_recursion(mdp):
    q = uniform_q(mdp, exact=True)
    scale = Fraction(mdp.reward_scale)
    for s, a in mdp.pairs():
        node = mdp.node(s)
        child = node.children[node.actions.index(a)]
        assert q[s, a] == scale * recursive_success(mdp, child)


@given(small_trees)
def test_uniform_policy_value_is_mean_of_q(mdp):
    v = policy_value(mdp, uniform_policy(mdp))
    q = uniform_q(mdp)
    for node in mdp.nodes:
        if not node.is_terminal:
            assert v[node.id] == pytest.approx(float(np.mean(q.state_values(node.id))), abs=1e-12)


@given(small_trees)
def test_optimal_value_matches_recursion(mdp):
    assert optimal_value(mdp).root == recursive_optimum(mdp, mdp.root)
    qs = optimal_q(mdp)
    assert max(qs.state_values(mdp.root)) == optimal_value(mdp).root


@given(small_trees)
def test_greedy_over_uniform_q_is_optimal(mdp):
    q = uniform_q(mdp, exact=True).as_float()
    v = policy_value(mdp, greedy_from_q(mdp, q)).root
    assert abs(v - optimal_value(mdp).root) < 1e-12


@given(small_trees, st.sampled_from([3.0, 0.25, 1e-3]))
def test_greedy_invariant_to_q_scale(mdp, c):
    q = uniform_q(mdp)
    a = greedy_from_q(mdp, q)
    b = greedy_from_q(mdp, QTable(mdp, q.values * c))
    np.testing.assert_array_equal(a.probs_flat, b.probs_flat)


@given(small_trees, st.sampled_from([1.0, 0.1, 0.01, 0.001]))
def test_softmax_value_at_least_bound(mdp, rho):
    rep = theorem2_bound(mdp, uniform_q(mdp, exact=True), rho)
    assert rep.holds
    assert rep.bound <= mdp.reward_scale + 1e-12


@given(small_trees)
def test_zero_iff_subtree_unrewarded(mdp):
    q = uniform_q(mdp, exact=True)
    zeros = zero_mask(q.values)
    for k, (s, a) in enumerate(mdp.pairs()):
        child = mdp.node(s).children[mdp.node(s).actions.index(a)]
        has_reward = any(
            mdp.node(leaf).terminal_reward > 0
            for leaf in mdp.rewarded_leaves()
            if leaf.startswith(child)
        )
        assert zeros[k] == (not has_reward)


def test_bound_by_hand():
    # Root: A -> rewarded leaf, B -> unrewarded leaf. One key state, N = 1, max Q = 1.
    mdp = TreeMdp(
        (
            StateNode("", ("A", "B"), ("A", "B")),
            StateNode("A", terminal_reward=1.0),
            StateNode("B", terminal_reward=0.0),
        )
    )
    q = uniform_q(mdp, exact=True)
    for rho in (1.0, 0.5, 0.1):
        rep = theorem2_bound(mdp, q, rho)
        expect = 1 - 1 / (1 + math.exp(1 / rho))
        assert rep.bound == pytest.approx(expect, abs=1e-15)
        # Here the bound is tight: the softmax success rate is the same expression.
        assert rep.exact_value == pytest.approx(expect, abs=1e-15)
        assert [k.state for k in rep.key_states] == [""]


def test_bound_rejects_bad_rho(didactic):
    q = uniform_q(didactic)
    with pytest.raises(ValueError):
        theorem2_bound(didactic, q, 0.0)


def test_bound_no_overflow_at_tiny_rho(didactic):
    rep = theorem2_bound(didactic, uniform_q(didactic), 1e-6)
    assert math.isfinite(rep.bound) and rep.bound == pytest.approx(1.0)


def test_reach_sums_to_one_over_leaves(didactic):
    pol = softmax_from_q(didactic, uniform_q(didactic), 0.3)
    reach = reach_probabilities(didactic, pol)
    leaves = [didactic.index[n.id] for n in didactic.leaves()]
    assert reach[leaves].sum() == pytest.approx(1.0, abs=1e-12)


def test_mismatched_q_rejected(didactic):
    with pytest.raises(TreeError):
        QTable(didactic, np.zeros(3))


def test_csv_export(didactic, tmp_path):
    q = uniform_q(didactic)
    q.to_csv(tmp_path / "q.csv")
    lines = (tmp_path / "q.csv").read_text().splitlines()
    assert lines[0] == "state,action,value"
    assert len(lines) == 1 + didactic.n_pairs
    policy_value(didactic, uniform_policy(didactic)).to_csv(tmp_path / "v.csv")
    assert (tmp_path / "v.csv").read_text().startswith("state,value")
