"""Exact dynamic programming on tree MDPs.

All passes are iterative over the stored breadth-first order (reversed for
backward induction), so arbitrarily deep trees are fine. Values can be
computed in floating point or, with ``exact=True``, as ``Fraction`` objects.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from rover.tree import TreeError, TreeMdp

if TYPE_CHECKING:
    from rover.policies import PolicyTable

ZERO_TOL = 1e-12


@dataclass(frozen=True)
class QTable:
    """Values for every (non-terminal state, action) pair of ``mdp``.

    ``values`` is a flat array indexed by ``mdp.pair``; dtype is float64, or
    object when it holds exact fractions.
    """

    mdp: TreeMdp
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (self.mdp.n_pairs,):
            raise TreeError(
                f"QTable has {self.values.shape} entries, tree has {self.mdp.n_pairs} pairs"
            )

    def __getitem__(self, key: tuple[str, str]):
        s, a = key
        return self.values[self.mdp.pair(s, a)]

    def at(self, i: int) -> np.ndarray:
        """Values of the actions at node index ``i``."""
        o = self.mdp.pair_offset[i]
        return self.values[o : o + self.mdp.n_actions[i]]

    def state_values(self, s: str) -> np.ndarray:
        return self.at(self.mdp.index[s])

    @property
    def is_exact(self) -> bool:
        return self.values.dtype == object

    def as_float(self) -> QTable:
        return QTable(self.mdp, self.values.astype(np.float64))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["state", "action", "value"])
            for k, (s, a) in enumerate(self.mdp.pairs()):
                w.writerow([s, a, repr(float(self.values[k]))])


@dataclass(frozen=True)
class ValueTable:
    mdp: TreeMdp
    values: np.ndarray

    def __getitem__(self, s: str):
        return self.values[self.mdp.index[s]]

    @property
    def root(self):
        return self.values[self.mdp.root_index]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["state", "value"])
            for node, v in zip(self.mdp.nodes, self.values):
                w.writerow([node.id, repr(float(v))])


def _leaf_value(mdp: TreeMdp, i: int, exact: bool):
    r = mdp.nodes[i].terminal_reward
    return Fraction(r) if exact else float(r)


def uniform_q(mdp: TreeMdp, exact: bool = False) -> QTable:
    """Q-values of the uniform random policy.

    One backward sweep of the mean-operator Bellman update with gamma = 1:
    a transition into a terminal pays its reward, otherwise the value is the
    average of the successor's action values.
    """
    dtype = object if exact else np.float64
    q = np.zeros(mdp.n_pairs, dtype=dtype)
    # Mean of Q over each state's actions (the uniform state value).
    v = [None] * len(mdp)
    for i in mdp.postorder():
        kids = mdp.child_index[i]
        if not kids:
            v[i] = _leaf_value(mdp, i, exact)
            continue
        o = mdp.pair_offset[i]
        for k, j in enumerate(kids):
            q[o + k] = v[j]
        block = q[o : o + len(kids)]
        v[i] = sum(block, Fraction(0)) / len(kids) if exact else float(block.mean())
    return QTable(mdp, q)


def _policy_probs(mdp: TreeMdp, policy: PolicyTable, i: int) -> np.ndarray:
    sid = mdp.nodes[i].id
    try:
        p = policy.probs(sid)
    except KeyError:
        raise TreeError(f"policy is missing state {sid!r}") from None
    if len(p) != mdp.n_actions[i]:
        raise TreeError(f"policy at {sid!r} has {len(p)} entries, expected {mdp.n_actions[i]}")
    return p


def policy_value(mdp: TreeMdp, policy: PolicyTable) -> ValueTable:
    """V(s) = sum_a pi(a|s) V(child); a terminal's value is its reward."""
    values = np.zeros(len(mdp))
    for i in mdp.postorder():
        kids = mdp.child_index[i]
        if not kids:
            values[i] = mdp.nodes[i].terminal_reward
            continue
        p = _policy_probs(mdp, policy, i)
        values[i] = float(np.dot(p, values[list(kids)]))
    return ValueTable(mdp, values)


def optimal_value(mdp: TreeMdp) -> ValueTable:
    values = np.zeros(len(mdp))
    for i in mdp.postorder():
        kids = mdp.child_index[i]
        values[i] = mdp.nodes[i].terminal_reward if not kids else max(values[j] for j in kids)
    return ValueTable(mdp, values)


def optimal_q(mdp: TreeMdp) -> QTable:
    """Q* under the max operator; the fixed point of tabular Q-learning."""
    v = optimal_value(mdp).values
    q = np.zeros(mdp.n_pairs)
    for i, kids in enumerate(mdp.child_index):
        o = mdp.pair_offset[i]
        for k, j in enumerate(kids):
            q[o + k] = v[j]
    return QTable(mdp, q)


def reach_probabilities(mdp: TreeMdp, policy: PolicyTable) -> np.ndarray:
    """Probability of visiting each node when rolling out ``policy`` from the root."""
    reach = np.zeros(len(mdp))
    reach[mdp.root_index] = 1.0
    for i in mdp.order:
        kids = mdp.child_index[i]
        if kids and reach[i] > 0:
            p = _policy_probs(mdp, policy, i)
            for pk, j in zip(p, kids):
                reach[j] = reach[i] * float(pk)
    return reach


@dataclass(frozen=True)
class KeyState:
    state: str
    n_zero: int
    n_actions: int
    reach: float
    max_q: float


@dataclass(frozen=True)
class Theorem2Report:
    """Lower bound on the softmax policy's root value next to its exact value."""

    bound: float
    key_states: list[KeyState]
    exact_value: float
    rho: float

    @property
    def holds(self) -> bool:
        return self.exact_value >= self.bound - ZERO_TOL


def zero_mask(values: np.ndarray) -> np.ndarray:
    """Exact zero test for fractions, |x| < 1e-12 for floats."""
    if values.dtype == object:
        return np.array([x == 0 for x in values], dtype=bool)
    return np.abs(values) < ZERO_TOL


def _zero_mass(n_zero: int, x: float) -> float:
    """n / (n + exp(x)) without overflowing for large x."""
    t = math.log(n_zero) - x
    if t < -700:
        return 0.0
    return 1.0 / (1.0 + math.exp(-t))


def theorem2_bound(mdp: TreeMdp, q: QTable, rho: float) -> Theorem2Report:
    """Evaluate the softmax-over-uniform-Q performance bound.

    ``bound = R * (1 - sum_{s in P} reach(s) * N(s) / (N(s) + exp(max_a Q(s,a)/rho)))``
    where ``P`` are the states with at least one zero-valued and one
    positive-valued action, ``N(s)`` is the count of zero-valued actions, and
    ``reach`` is the visit probability under the softmax policy itself.
    """
    from rover.policies import softmax_from_q

    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    if q.mdp is not mdp and q.mdp != mdp:
        raise TreeError("Q-table does not belong to this tree")
    qf = q.as_float()
    pi = softmax_from_q(mdp, qf, rho)
    reach = reach_probabilities(mdp, pi)
    zeros = zero_mask(q.values)

    total = 0.0
    keys = []
    for i, node in enumerate(mdp.nodes):
        n_a = int(mdp.n_actions[i])
        if n_a == 0:
            continue
        o = mdp.pair_offset[i]
        n_zero = int(zeros[o : o + n_a].sum())
        if 1 <= n_zero <= n_a - 1:
            m = float(qf.values[o : o + n_a].max())
            keys.append(KeyState(node.id, n_zero, n_a, float(reach[i]), m))
            total += reach[i] * _zero_mass(n_zero, m / rho)
    bound = mdp.reward_scale * (1.0 - total)
    exact = float(policy_value(mdp, pi).root)
    return Theorem2Report(bound=bound, key_states=keys, exact_value=exact, rho=rho)
