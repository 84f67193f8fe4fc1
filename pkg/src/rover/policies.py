"""Policies derived from Q-tables, and trajectory sampling."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from rover.exact import QTable
from rover.tree import TreeError, TreeMdp, segments

SUM_TOL = 1e-12


@dataclass(frozen=True)
class PolicyTable:
    """Per-state action distributions stored in the tree's flat pair layout."""

    mdp: TreeMdp
    probs_flat: np.ndarray

    def __post_init__(self) -> None:
        p = self.probs_flat
        if p.shape != (self.mdp.n_pairs,):
            raise TreeError(f"policy has {p.shape} entries, tree has {self.mdp.n_pairs} pairs")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise TreeError("policy probabilities must be finite and non-negative")
        internal = np.flatnonzero(self.mdp.n_actions > 0)
        if len(internal):
            totals = np.add.reduceat(p, self.mdp.pair_offset[internal])
            bad = np.abs(totals - 1.0) > SUM_TOL * self.mdp.n_actions[internal]
            if bad.any():
                i = internal[np.argmax(bad)]
                raise TreeError(
                    f"policy at {self.mdp.nodes[i].id!r} sums to {totals[np.argmax(bad)]!r}, not 1"
                )

    def at(self, i: int) -> np.ndarray:
        o = self.mdp.pair_offset[i]
        return self.probs_flat[o : o + self.mdp.n_actions[i]]

    @cached_property
    def cumulative(self) -> list[list[float] | None]:
        """Per-node cumulative distributions, last entry pinned to 1.0."""
        seg = segments(self.mdp)
        # One global running sum, shifted per state. A zero-probability slot
        # adds exactly 0.0, so it still equals its predecessor after the shift.
        c = np.cumsum(self.probs_flat)
        before = np.concatenate([[0.0], c])[seg.starts]
        c = c - before[seg.seg_of_pair]
        c /= c[seg.starts + seg.sizes - 1][seg.seg_of_pair]
        out: list[list[float] | None] = [None] * len(self.mdp)
        for k, i in enumerate(np.flatnonzero(self.mdp.n_actions > 0)):
            out[i] = c[seg.starts[k] : seg.starts[k] + seg.sizes[k]].tolist()
        return out

    def probs(self, s: str) -> np.ndarray:
        if s not in self.mdp.index:
            raise KeyError(s)
        return self.at(self.mdp.index[s])

    def __getitem__(self, key: tuple[str, str]) -> float:
        s, a = key
        return float(self.probs_flat[self.mdp.pair(s, a)])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["state", "action", "probability"])
            for k, (s, a) in enumerate(self.mdp.pairs()):
                w.writerow([s, a, repr(float(self.probs_flat[k]))])


@dataclass(frozen=True)
class Trajectory:
    states: tuple[str, ...]
    actions: tuple[str, ...]
    reward: float
    # Flat pair slots of (states[k], actions[k]); handy for learners.
    pairs: tuple[int, ...] = ()

    @property
    def leaf(self) -> str:
        return self.states[-1]

    def __len__(self) -> int:
        return len(self.actions)


def uniform_policy(mdp: TreeMdp) -> PolicyTable:
    seg = segments(mdp)
    return PolicyTable(mdp, 1.0 / seg.sizes[seg.seg_of_pair].astype(np.float64))


def _check_q(mdp: TreeMdp, q: QTable) -> np.ndarray:
    if q.values.shape != (mdp.n_pairs,):
        raise TreeError("Q-table does not match the tree")
    return np.asarray(q.values, dtype=np.float64)


def greedy_from_q(mdp: TreeMdp, q: QTable) -> PolicyTable:
    """Deterministic argmax; ties go to the earliest action in construction order."""
    qv = _check_q(mdp, q)
    p = np.zeros(mdp.n_pairs)
    p[segments(mdp).argmax_first(qv)] = 1.0
    return PolicyTable(mdp, p)


def softmax(x: np.ndarray, rho: float = 1.0) -> np.ndarray:
    z = (x - x.max()) / rho
    e = np.exp(z)
    return e / e.sum()


def softmax_from_q(mdp: TreeMdp, q: QTable, rho: float = 1.0) -> PolicyTable:
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    qv = _check_q(mdp, q)
    seg = segments(mdp)
    e = np.exp((qv - seg.max(qv)[seg.seg_of_pair]) / rho)
    return PolicyTable(mdp, e / seg.sum(e)[seg.seg_of_pair])


def epsilon_greedy_from_q(mdp: TreeMdp, q: QTable, eps: float) -> PolicyTable:
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"eps must be in [0, 1], got {eps}")
    qv = _check_q(mdp, q)
    seg = segments(mdp)
    p = eps / seg.sizes[seg.seg_of_pair].astype(np.float64)
    p[seg.argmax_first(qv)] += 1.0 - eps
    return PolicyTable(mdp, p)


def sample_trajectory(
    mdp: TreeMdp, policy: PolicyTable, rng: np.random.Generator
) -> Trajectory:
    """Roll out from the root until a terminal state.

    Draws one uniform number per step, so a deterministic policy still
    advances the generator by the trajectory length.
    """
    if policy.mdp is not mdp and policy.probs_flat.shape != (mdp.n_pairs,):
        raise TreeError("policy does not match the tree")
    cum = policy.cumulative
    i = mdp.root_index
    states = [mdp.nodes[i].id]
    actions = []
    pairs = []
    while mdp.child_index[i]:
        node = mdp.nodes[i]
        # u in [0, 1) never selects a zero-probability slot: its cumulative
        # value equals its predecessor's.
        k = bisect.bisect_right(cum[i], rng.random())
        pairs.append(int(mdp.pair_offset[i]) + k)
        actions.append(node.actions[k])
        i = mdp.child_index[i][k]
        states.append(mdp.nodes[i].id)
    return Trajectory(tuple(states), tuple(actions), mdp.nodes[i].terminal_reward, tuple(pairs))
