"""Slow reference computations written straight from the definitions.

They deliberately avoid the flat pair layout and vectorized segment ops of
the package, walking states and actions with plain Python loops instead.
Losses are evaluated with 40 significant digits so that central differences
resolve even tiny gradient components.
"""

import itertools
import math

import mpmath
import numpy as np

from rover import countdown as cd
from rover.learners import LogitsModel, sample_group
from rover.tree import RandomTreeParams, build_random_tree


DIGITS = 40


def state_log_probs(mdp, theta, s):
    node = mdp.node(s)
    logits = [mpmath.mpf(float(theta[mdp.pair(s, a)])) for a in node.actions]
    lse = mpmath.log(mpmath.fsum(mpmath.exp(x) for x in logits))
    return {a: x - lse for a, x in zip(node.actions, logits)}


def rel_q(mdp, theta, theta_old, s, a, rho):
    return rho * (state_log_probs(mdp, theta, s)[a] - state_log_probs(mdp, theta_old, s)[a])


def frozen_targets(mdp, theta_ref, theta_old, groups, rho, beta):
    """Per-step regression targets evaluated at ``theta_ref`` and then held fixed."""
    with mpmath.workdps(DIGITS):
        return _targets(mdp, theta_ref, theta_old, groups, rho, beta)


def _targets(mdp, theta_ref, theta_old, groups, rho, beta):
    out = []
    for g in groups:
        for tr, rc in zip(g.trajectories, g.centered_rewards):
            for t in range(len(tr)):
                nxt = mdp.node(tr.states[t + 1])
                if nxt.is_terminal:
                    boot = 0.0
                else:
                    boot = sum(
                        rel_q(mdp, theta_ref, theta_old, nxt.id, b, rho) for b in nxt.actions
                    ) / len(nxt.actions)
                out.append(float(rc) + beta * boot)
    return out


def rover_loss(mdp, theta, theta_old, groups, rho, beta, targets=None):
    """Mean over all steps of (relative Q - target)^2.

    With ``targets=None`` the targets move with ``theta`` (no stop-gradient).
    """
    with mpmath.workdps(DIGITS):
        if targets is None:
            targets = frozen_targets(mdp, theta, theta_old, groups, rho, beta)
        k = 0
        total = mpmath.mpf(0)
        for g in groups:
            for tr in g.trajectories:
                for s, a in zip(tr.states, tr.actions):
                    d = rel_q(mdp, theta, theta_old, s, a, rho) - targets[k]
                    total += d * d
                    k += 1
        return total / k


def reinforce_direction(mdp, theta, groups):
    """sum over steps of centered reward * grad log pi, via the softmax identity
    d log pi(a|s) / d theta(s, b) = [a == b] - pi(b|s)."""
    g = np.zeros(mdp.n_pairs)
    for grp in groups:
        for tr, rc in zip(grp.trajectories, grp.centered_rewards):
            for s, a in zip(tr.states, tr.actions):
                lp = state_log_probs(mdp, theta, s)
                for b, lpb in lp.items():
                    g[mdp.pair(s, b)] += rc * ((a == b) - math.exp(float(lpb)))
    return g


def central_difference(f, theta, h=1e-6):
    """Central differences; the step is the exact float gap between the two probes."""
    g = np.zeros_like(theta)
    with mpmath.workdps(DIGITS):
        for i in range(len(theta)):
            up, down = theta.copy(), theta.copy()
            up[i] += h
            down[i] -= h
            gap = mpmath.mpf(float(up[i])) - mpmath.mpf(float(down[i]))
            g[i] = float((f(up) - f(down)) / gap)
    return g


def random_case(seed, n_groups=3, group_size=4):
    """A small random tree, random current/old logits and groups sampled from the old policy."""
    rng = np.random.default_rng(seed)
    mdp = build_random_tree(
        RandomTreeParams(max_depth=3, branching=(1, 3), reward_leaf_fraction=0.4, seed=seed)
    )
    old = LogitsModel(mdp, rng.normal(0, 1, mdp.n_pairs))
    model = LogitsModel(mdp, old.theta + rng.normal(0, 0.5, mdp.n_pairs))
    groups = [sample_group(mdp, old.policy(), group_size, rng) for _ in range(n_groups)]
    return mdp, model, old, groups


def shapes(items):
    """Every binary bracketing of an ordered list of leaves, every operator choice."""
    if len(items) == 1:
        yield items[0]
        return
    for cut in range(1, len(items)):
        for left in shapes(items[:cut]):
            for right in shapes(items[cut:]):
                for op in cd.OPS:
                    yield (op, left, right)


def brute_force_solutions(inst):
    """Independent oracle: all orderings x bracketings x operators, no pruning."""
    found = set()
    for perm in itertools.permutations(inst.nums):
        for e in shapes(list(perm)):
            if cd.evaluate(e) == inst.target:
                found.add(cd.canonical(e))
    return found
