import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rover.exact import QTable, policy_value, uniform_q
from rover.policies import (
    PolicyTable,
    epsilon_greedy_from_q,
    greedy_from_q,
    sample_trajectory,
    softmax,
    softmax_from_q,
    uniform_policy,
)
from rover.tree import RandomTreeParams, TreeError, build_random_tree

N_MC = 100_000


def binomial_ok(hits: int, n: int, p: float) -> bool:
    sd = np.sqrt(n * p * (1 - p))
    return abs(hits - n * p) <= 3 * sd + 1e-9


def test_greedy_tie_break_first_action(didactic):
    pol = greedy_from_q(didactic, uniform_q(didactic))
    # All root actions tie at 1/16; the earliest (A) wins.
    assert list(pol.probs("")) == [1.0, 0.0, 0.0, 0.0]
    assert pol["A", "C"] == 1.0


def test_greedy_reaches_acd(didactic):
    pol = greedy_from_q(didactic, uniform_q(didactic))
    tr = sample_trajectory(didactic, pol, np.random.default_rng(0))
    assert tr.leaf == "ACD" and tr.reward == 1.0 and len(tr) == 3


def test_softmax_stable_for_large_inputs():
    p = softmax(np.array([1000.0, 999.0, -1000.0]), 0.01)
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


@given(st.integers(0, 10**6))
def test_softmax_tends_to_greedy(seed):
    mdp = build_random_tree(RandomTreeParams(max_depth=4, branching=(1, 4), seed=seed))
    q = uniform_q(mdp)
    soft = policy_value(mdp, softmax_from_q(mdp, q, 1e-6)).root
    greedy = policy_value(mdp, greedy_from_q(mdp, q)).root
    assert soft == pytest.approx(greedy, abs=1e-6)


def test_softmax_rejects_nonpositive_rho(didactic):
    with pytest.raises(ValueError):
        softmax_from_q(didactic, uniform_q(didactic), 0.0)


@pytest.mark.parametrize("eps", [-0.1, 1.5])
def test_epsilon_range(didactic, eps):
    with pytest.raises(ValueError):
        epsilon_greedy_from_q(didactic, uniform_q(didactic), eps)


def test_epsilon_greedy_mass(didactic):
    pol = epsilon_greedy_from_q(didactic, uniform_q(didactic), 0.2)
    np.testing.assert_allclose(pol.probs(""), [0.85, 0.05, 0.05, 0.05])


def test_policy_validation(didactic):
    with pytest.raises(TreeError):
        PolicyTable(didactic, np.zeros(didactic.n_pairs))
    with pytest.raises(TreeError):
        PolicyTable(didactic, np.ones(3))
    bad = uniform_policy(didactic).probs_flat.copy()
    bad[0] = -0.25
    bad[1] = 0.75
    with pytest.raises(TreeError):
        PolicyTable(didactic, bad)
    with pytest.raises(KeyError):
        uniform_policy(didactic).probs("ZZZ")


def test_sampling_is_seeded(didactic):
    pol = uniform_policy(didactic)
    a = [sample_trajectory(didactic, pol, np.random.default_rng(5)).leaf for _ in range(3)]
    rng1, rng2 = np.random.default_rng(9), np.random.default_rng(9)
    assert [sample_trajectory(didactic, pol, rng1) for _ in range(20)] == [
        sample_trajectory(didactic, pol, rng2) for _ in range(20)
    ]
    assert len(set(a)) == 1


def test_zero_probability_action_never_sampled(didactic):
    p = uniform_policy(didactic).probs_flat.copy()
    p[:4] = [0.0, 0.5, 0.0, 0.5]
    pol = PolicyTable(didactic, p)
    rng = np.random.default_rng(1)
    firsts = {sample_trajectory(didactic, pol, rng).actions[0] for _ in range(2000)}
    assert firsts == {"B", "D"}


def test_uniform_success_rate_monte_carlo(didactic):
    rng = np.random.default_rng(123)
    pol = uniform_policy(didactic)
    hits = sum(sample_trajectory(didactic, pol, rng).reward > 0 for _ in range(N_MC))
    assert binomial_ok(hits, N_MC, 4 / 64)


def test_softmax_success_rate_monte_carlo(didactic):
    pol = softmax_from_q(didactic, uniform_q(didactic), 0.25)
    exact = policy_value(didactic, pol).root
    rng = np.random.default_rng(7)
    hits = sum(sample_trajectory(didactic, pol, rng).reward > 0 for _ in range(N_MC))
    assert binomial_ok(hits, N_MC, exact)


def test_first_action_frequencies_monte_carlo(didactic):
    p = uniform_policy(didactic).probs_flat.copy()
    p[:4] = [0.1, 0.2, 0.3, 0.4]
    pol = PolicyTable(didactic, p)
    rng = np.random.default_rng(11)
    counts = dict.fromkeys("ABCD", 0)
    for _ in range(N_MC):
        counts[sample_trajectory(didactic, pol, rng).actions[0]] += 1
    for a, pa in zip("ABCD", [0.1, 0.2, 0.3, 0.4]):
        assert binomial_ok(counts[a], N_MC, pa)


def test_q_table_shape_checked(didactic):
    other = build_random_tree(RandomTreeParams(max_depth=2, seed=1))
    with pytest.raises(TreeError):
        greedy_from_q(didactic, QTable(other, np.zeros(other.n_pairs)))


def test_policy_csv(didactic, tmp_path):
    uniform_policy(didactic).to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "state,action,probability"
    assert lines[1] == ",A,0.25"
