"""Sampled learners on tree MDPs.

* ``rover_train``: tabular ROVER. Logits are the policy; the Q-function is
  the relative log-probability ``rho * (log pi - log pi_old)`` against the
  epoch's frozen behavior policy, regressed onto the centered reward plus
  the mean relative Q of the next state.
* ``pg_group_baseline_train``: policy gradient with group-mean-centered
  advantages, no std normalization, no clipping, no KL.
* ``q_learning``: tabular Q-learning with annealed epsilon-greedy behavior.
* ``td_uniform_evaluation``: sampled evaluation of the uniform policy.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rover.exact import QTable, policy_value
from rover.metrics import coverage_of, policy_entropy
from rover.policies import (
    PolicyTable,
    Trajectory,
    epsilon_greedy_from_q,
    greedy_from_q,
    sample_trajectory,
    uniform_policy,
)
from rover.tree import TreeError, TreeMdp, segments, step

METRICS_SCHEMA = "rover-metrics/1"
METRICS_COLUMNS = (
    "epoch",
    "step",
    "loss",
    "success_rate",
    "mode_coverage",
    "root_entropy",
    "mean_traj_entropy",
)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or parameter becomes non-finite. Carries the partial log."""

    def __init__(self, message: str, log: MetricsLog):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    groups_per_epoch: int = 16
    group_size: int = 8
    lr: float = 5e-2
    rho: float = 1.0
    beta: float = 1.0
    optimizer: str = "adam"
    seed: int = 0
    # Passes over the epoch's groups, one optimizer step per group per pass.
    passes: int = 1
    # Tabular step size for q_learning / td_uniform_evaluation.
    td_lr: float = 0.5
    eps_start: float = 1.0
    eps_end: float = 0.05

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.epochs < 1 or self.groups_per_epoch < 1 or self.passes < 1:
            raise ValueError("epochs, groups_per_epoch and passes must be >= 1")
        if not self.lr > 0 or not self.td_lr > 0:
            raise ValueError("learning rates must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.eps_end <= 1 and 0 <= self.eps_start <= 1):
            raise ValueError("epsilon schedule must lie in [0, 1]")

    def replace(self, **kw) -> TrainConfig:
        return TrainConfig(**{**asdict(self), **kw})


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, **row) -> None:
        self.rows.append({k: row[k] for k in METRICS_COLUMNS})

    def last(self) -> dict:
        return self.rows[-1]

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            f.write(f"# schema: {METRICS_SCHEMA}\n")
            for k, v in self.meta.items():
                f.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
            w = csv.writer(f)
            w.writerow(METRICS_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in METRICS_COLUMNS])

    @classmethod
    def from_csv(cls, path: str | Path) -> MetricsLog:
        meta = {}
        body = []
        with open(path) as f:
            for line in f:
                if line.startswith("# "):
                    k, _, v = line[2:].rstrip("\n").partition(": ")
                    meta[k] = v if k == "schema" else json.loads(v)
                else:
                    body.append(line)
        reader = csv.DictReader(body)
        if tuple(reader.fieldnames or ()) != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = [
            {k: (int(v) if k in ("epoch", "step") else float(v)) for k, v in r.items()}
            for r in reader
        ]
        return cls(rows, meta)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


# -- logits model ----------------------------------------------------------


def log_softmax_flat(mdp: TreeMdp, theta: np.ndarray) -> np.ndarray:
    seg = segments(mdp)
    z = theta - seg.max(theta)[seg.seg_of_pair]
    return z - np.log(seg.sum(np.exp(z)))[seg.seg_of_pair]


@dataclass
class LogitsModel:
    """One real logit per (state, action); the policy is a per-state softmax."""

    mdp: TreeMdp
    theta: np.ndarray

    @classmethod
    def zeros(cls, mdp: TreeMdp) -> LogitsModel:
        return cls(mdp, np.zeros(mdp.n_pairs))

    def copy(self) -> LogitsModel:
        return LogitsModel(self.mdp, self.theta.copy())

    def log_probs(self) -> np.ndarray:
        return log_softmax_flat(self.mdp, self.theta)

    def log_prob(self, s: str, a: str) -> float:
        return float(self.log_probs()[self.mdp.pair(s, a)])

    def policy(self) -> PolicyTable:
        p = np.exp(self.log_probs())
        # Renormalize so each state sums to one to machine precision.
        seg = segments(self.mdp)
        return PolicyTable(self.mdp, p / seg.sum(p)[seg.seg_of_pair])


# -- ROVER pieces ----------------------------------------------------------


def center_rewards(raw: Sequence[float]) -> np.ndarray:
    """Subtract the group mean; no std normalization."""
    r = np.asarray(raw, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty reward group")
    return r - r.mean()


@dataclass(frozen=True)
class RolloutGroup:
    prompt_root: str
    trajectories: tuple[Trajectory, ...]
    raw_rewards: np.ndarray
    centered_rewards: np.ndarray

    @classmethod
    def from_trajectories(cls, root: str, trajectories: Sequence[Trajectory]) -> RolloutGroup:
        raw = np.array([t.reward for t in trajectories], dtype=np.float64)
        return cls(root, tuple(trajectories), raw, center_rewards(raw))


def sample_group(
    mdp: TreeMdp, policy: PolicyTable, n: int, rng: np.random.Generator
) -> RolloutGroup:
    return RolloutGroup.from_trajectories(
        mdp.root, [sample_trajectory(mdp, policy, rng) for _ in range(n)]
    )


def relative_q(model: LogitsModel, old: LogitsModel, s: str, a: str, rho: float) -> float:
    return rho * (model.log_prob(s, a) - old.log_prob(s, a))


def next_state_mean_q(
    model: LogitsModel, old: LogitsModel, s_next: str, rho: float
) -> float:
    """Mean relative Q over the actions of ``s_next``; zero at a terminal."""
    mdp = model.mdp
    node = mdp.node(s_next)
    if node.is_terminal:
        return 0.0
    return float(np.mean([relative_q(model, old, s_next, a, rho) for a in node.actions]))


def rover_target(
    group: RolloutGroup,
    model: LogitsModel,
    old: LogitsModel,
    s_t: str,
    a_t: str,
    rho: float,
    beta: float,
    traj: int | None = None,
) -> float:
    """Bellman target for (s_t, a_t): broadcast centered reward + beta * mean next Q.

    Several rollouts can share a prefix; ``traj`` selects which one supplies
    the centered reward (default: the first containing the pair).
    """
    candidates = range(len(group.trajectories)) if traj is None else [traj]
    for k in candidates:
        tr = group.trajectories[k]
        for s, a in zip(tr.states, tr.actions):
            if s == s_t and a == a_t:
                s_next = step(model.mdp, s_t, a_t)
                return float(group.centered_rewards[k]) + beta * next_state_mean_q(
                    model, old, s_next, rho
                )
    raise TreeError(f"pair ({s_t!r}, {a_t!r}) is not on a trajectory of the group")


@dataclass(frozen=True)
class _StepBatch:
    """All (s_t, a_t) steps of a batch flattened, with broadcast rewards."""

    pairs: np.ndarray
    centered: np.ndarray
    next_seg: np.ndarray  # segment of s_{t+1}, or -1 when terminal

    @classmethod
    def build(cls, mdp: TreeMdp, groups: Sequence[RolloutGroup]) -> _StepBatch:
        seg = segments(mdp)
        pairs, centered, nxt = [], [], []
        for g in groups:
            for tr, rc in zip(g.trajectories, g.centered_rewards):
                prs = tr.pairs or tuple(mdp.pair(s, a) for s, a in zip(tr.states, tr.actions))
                pairs.extend(prs)
                centered.extend([rc] * len(prs))
                nxt.extend(seg.seg_of_node[mdp.index[s]] for s in tr.states[1:])
        if not pairs:
            raise ValueError("empty batch")
        return cls(np.array(pairs), np.array(centered, dtype=np.float64), np.array(nxt))


def _chain_to_logits(mdp: TreeMdp, g_logp: np.ndarray, logp: np.ndarray) -> np.ndarray:
    """Map d/d(log pi) to d/d(theta) through the per-state log-softmax."""
    seg = segments(mdp)
    pi = np.exp(logp)
    return g_logp - pi * seg.sum(g_logp)[seg.seg_of_pair]


def _rover_loss_and_grad(
    model: LogitsModel, old_logp: np.ndarray, batch: _StepBatch, rho: float, beta: float
) -> tuple[float, np.ndarray]:
    mdp = model.mdp
    seg = segments(mdp)
    logp = model.log_probs()
    relq = rho * (logp - old_logp)
    seg_mean = seg.sum(relq) / seg.sizes
    q_next = np.where(batch.next_seg >= 0, seg_mean[np.maximum(batch.next_seg, 0)], 0.0)
    target = batch.centered + beta * q_next  # constant: no gradient flows through it
    diff = relq[batch.pairs] - target
    T = len(diff)
    loss = float(diff @ diff) / T
    g_relq = np.zeros(mdp.n_pairs)
    np.add.at(g_relq, batch.pairs, 2.0 * diff / T)
    return loss, _chain_to_logits(mdp, rho * g_relq, logp)


def rover_loss_and_grad(
    model: LogitsModel,
    old: LogitsModel,
    groups: Sequence[RolloutGroup],
    rho: float,
    beta: float,
) -> tuple[float, np.ndarray]:
    """Mean squared error between relative Q and the stop-gradient target.

    Returns the loss and its gradient with respect to ``model.theta`` (flat,
    in the tree's pair layout).
    """
    batch = _StepBatch.build(model.mdp, groups)
    return _rover_loss_and_grad(model, old.log_probs(), batch, rho, beta)


def _pg_loss_and_grad(
    model: LogitsModel, old_logp: np.ndarray, batch: _StepBatch
) -> tuple[float, np.ndarray]:
    logp = model.log_probs()
    ratio = np.exp(logp[batch.pairs] - old_logp[batch.pairs])
    T = len(ratio)
    surrogate = float(batch.centered @ ratio) / T
    g_logp = np.zeros(model.mdp.n_pairs)
    np.add.at(g_logp, batch.pairs, batch.centered * ratio / T)
    return -surrogate, -_chain_to_logits(model.mdp, g_logp, logp)


def pg_loss_and_grad(
    model: LogitsModel, old: LogitsModel, groups: Sequence[RolloutGroup]
) -> tuple[float, np.ndarray]:
    """Negative importance-weighted surrogate ``mean_t A_t * pi/pi_old`` and its gradient."""
    batch = _StepBatch.build(model.mdp, groups)
    return _pg_loss_and_grad(model, old.log_probs(), batch)


# -- optimizers ------------------------------------------------------------


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        theta -= self.lr * grad


class Adam:
    def __init__(self, lr: float, size: int, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, size: int):
    if config.optimizer == "adam":
        return Adam(config.lr, size)
    return SGD(config.lr)


# -- training loops --------------------------------------------------------


def _log_policy(
    log: MetricsLog,
    mdp: TreeMdp,
    epoch: int,
    step_count: int,
    loss: float,
    eval_policy: PolicyTable,
    behavior_policy: PolicyTable,
    rollouts: Sequence[Trajectory],
) -> None:
    ent = policy_entropy(mdp, behavior_policy)
    log.append(
        epoch=epoch,
        step=step_count,
        loss=loss,
        success_rate=float(policy_value(mdp, eval_policy).root) / mdp.reward_scale,
        mode_coverage=coverage_of(mdp, rollouts).coverage,
        root_entropy=ent.root,
        mean_traj_entropy=ent.mean,
    )


def _train_logits(
    mdp: TreeMdp,
    config: TrainConfig,
    loss_fn: Callable[[LogitsModel, np.ndarray, _StepBatch], tuple[float, np.ndarray]],
    method: str,
) -> tuple[LogitsModel, MetricsLog]:
    rng = np.random.default_rng(config.seed)
    model = LogitsModel.zeros(mdp)
    opt = make_optimizer(config, mdp.n_pairs)
    log = MetricsLog(meta={"method": method, "seed": config.seed, "config": asdict(config)})
    n_steps = 0
    for epoch in range(config.epochs):
        old_logp = model.log_probs()
        behavior = model.policy()
        groups = [
            sample_group(mdp, behavior, config.group_size, rng)
            for _ in range(config.groups_per_epoch)
        ]
        batches = [_StepBatch.build(mdp, [g]) for g in groups]
        losses = []
        for _ in range(config.passes):
            for batch in batches:
                loss, grad = loss_fn(model, old_logp, batch)
                if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise TrainingDiverged(
                        f"{method}: non-finite loss {loss!r} at epoch {epoch}, step {n_steps}",
                        log,
                    )
                opt.step(model.theta, grad)
                n_steps += 1
                losses.append(loss)
        if not np.all(np.isfinite(model.theta)):
            raise TrainingDiverged(f"{method}: non-finite logits at epoch {epoch}", log)
        rollouts = [t for g in groups for t in g.trajectories]
        pol = model.policy()
        _log_policy(log, mdp, epoch, n_steps, float(np.mean(losses)), pol, pol, rollouts)
    return model, log


def rover_train(mdp: TreeMdp, config: TrainConfig) -> tuple[LogitsModel, MetricsLog]:
    """Tabular ROVER: per epoch, freeze the behavior policy, sample groups,
    center rewards and regress relative Q onto the Bellman target."""
    rho, beta = config.rho, config.beta
    return _train_logits(
        mdp,
        config,
        lambda m, old_logp, b: _rover_loss_and_grad(m, old_logp, b, rho, beta),
        "rover",
    )


def pg_group_baseline_train(mdp: TreeMdp, config: TrainConfig) -> tuple[LogitsModel, MetricsLog]:
    return _train_logits(mdp, config, _pg_loss_and_grad, "pg")


def epsilon_schedule(config: TrainConfig, epoch: int) -> float:
    """Linear anneal from eps_start to eps_end over the first half of training."""
    half = max(1, config.epochs // 2)
    frac = min(1.0, epoch / half)
    return config.eps_start + frac * (config.eps_end - config.eps_start)


def _tabular_train(
    mdp: TreeMdp,
    config: TrainConfig,
    behavior_fn: Callable[[QTable, int], PolicyTable],
    backup: Callable[[np.ndarray, int], float],
    eval_fn: Callable[[QTable, int], PolicyTable],
    method: str,
) -> tuple[QTable, MetricsLog]:
    rng = np.random.default_rng(config.seed)
    q = np.zeros(mdp.n_pairs)
    log = MetricsLog(meta={"method": method, "seed": config.seed, "config": asdict(config)})
    lr = config.td_lr
    n_episodes = config.groups_per_epoch * config.group_size
    n_steps = 0
    for epoch in range(config.epochs):
        behavior = behavior_fn(QTable(mdp, q), epoch)
        rollouts = []
        sq_err = []
        for _ in range(n_episodes):
            tr = sample_trajectory(mdp, behavior, rng)
            rollouts.append(tr)
            for k, p in enumerate(tr.pairs):
                nxt = mdp.index[tr.states[k + 1]]
                if mdp.child_index[nxt]:
                    target = backup(q, nxt)
                else:
                    target = mdp.nodes[nxt].terminal_reward
                delta = target - q[p]
                q[p] += lr * delta
                sq_err.append(delta * delta)
                n_steps += 1
        table = QTable(mdp, q.copy())
        _log_policy(
            log,
            mdp,
            epoch,
            n_steps,
            float(np.mean(sq_err)),
            eval_fn(table, epoch),
            behavior_fn(table, epoch),
            rollouts,
        )
    return QTable(mdp, q), log


def _state_block(mdp: TreeMdp, q: np.ndarray, i: int) -> np.ndarray:
    o = mdp.pair_offset[i]
    return q[o : o + mdp.n_actions[i]]


def q_learning(mdp: TreeMdp, config: TrainConfig) -> tuple[QTable, MetricsLog]:
    """Tabular Q-learning, target ``r + max_a' Q(s', a')`` with gamma = 1.

    The logged success rate is that of the greedy policy; entropies are
    those of the epsilon-greedy behavior policy.
    """
    return _tabular_train(
        mdp,
        config,
        lambda table, epoch: epsilon_greedy_from_q(mdp, table, epsilon_schedule(config, epoch)),
        lambda q, i: float(_state_block(mdp, q, i).max()),
        lambda table, epoch: greedy_from_q(mdp, table),
        "q-learning",
    )


def td_uniform_evaluation(mdp: TreeMdp, config: TrainConfig) -> tuple[QTable, MetricsLog]:
    """Sampled mean-operator backups along uniform-policy rollouts."""
    uniform = uniform_policy(mdp)
    return _tabular_train(
        mdp,
        config,
        lambda table, epoch: uniform,
        lambda q, i: float(_state_block(mdp, q, i).mean()),
        lambda table, epoch: greedy_from_q(mdp, table),
        "td-uniform",
    )


TRAINERS = {
    "rover": rover_train,
    "pg": pg_group_baseline_train,
    "q-learning": q_learning,
}


def final_policy(mdp: TreeMdp, method: str, result, config: TrainConfig) -> PolicyTable:
    """Evaluation policy of a trained method: softmax of logits, or greedy over Q."""
    if isinstance(result, LogitsModel):
        return result.policy()
    if method == "q-learning":
        return greedy_from_q(mdp, result)
    raise ValueError(f"no evaluation policy for {method!r}")
