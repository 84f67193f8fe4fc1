"""Quality and diversity measurements: success, mode coverage, entropy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from rover.exact import reach_probabilities
from rover.policies import PolicyTable, Trajectory, sample_trajectory
from rover.tree import TreeMdp, segments


@dataclass(frozen=True)
class CoverageReport:
    samples: int
    successes: int
    modes_found: frozenset[str]
    n_modes: int

    @property
    def success_rate(self) -> float:
        return self.successes / self.samples if self.samples else 0.0

    @property
    def coverage(self) -> float:
        return len(self.modes_found) / self.n_modes if self.n_modes else 0.0


def coverage_of(mdp: TreeMdp, trajectories: Iterable[Trajectory]) -> CoverageReport:
    rewarded = set(mdp.rewarded_leaves())
    n = hits = 0
    found = set()
    for tr in trajectories:
        n += 1
        if tr.reward > 0:
            hits += 1
            found.add(tr.leaf)
    assert found <= rewarded
    return CoverageReport(n, hits, frozenset(found), len(rewarded))


def mode_coverage(
    mdp: TreeMdp, policy: PolicyTable, n_samples: int, rng: np.random.Generator
) -> CoverageReport:
    """Sample ``n_samples`` rollouts; tally successes and distinct rewarded leaves."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    return coverage_of(mdp, (sample_trajectory(mdp, policy, rng) for _ in range(n_samples)))


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats."""
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass(frozen=True)
class EntropyReport:
    per_state: dict[str, float] = field(repr=False)
    root: float
    # Expected per-step entropy along a rollout: sum_s reach(s) H(s) / E[length].
    mean: float


def policy_entropy(mdp: TreeMdp, policy: PolicyTable) -> EntropyReport:
    seg = segments(mdp)
    p = policy.probs_flat
    terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = seg.sum(terms)
    internal = np.flatnonzero(mdp.n_actions > 0)
    reach = reach_probabilities(mdp, policy)[internal]
    per_state = {mdp.nodes[i].id: float(x) for i, x in zip(internal, h)}
    mean = float(reach @ h / reach.sum())
    return EntropyReport(per_state, per_state.get(mdp.root, 0.0), mean)


@dataclass(frozen=True)
class DistinctSolutions:
    count: int
    oracle_total: int
    found: frozenset

    @property
    def recall(self) -> float:
        return self.count / self.oracle_total if self.oracle_total else 0.0


def distinct_solutions(solutions: Iterable, oracle: Iterable) -> DistinctSolutions:
    """Distinct correct canonical expressions among ``solutions``.

    ``solutions`` are canonical forms decoded from rewarded samples;
    ``oracle`` is the full canonical solution set of the instance.
    """
    oracle = frozenset(oracle)
    found = frozenset(s for s in solutions if s in oracle)
    return DistinctSolutions(len(found), len(oracle), found)
