"""Deterministic, tree-structured MDPs with binary terminal rewards.

States are named by the action string that leads to them from the root; the
root is the empty string. Nodes are stored in breadth-first construction
order, which also fixes the action ordering used for tie-breaking downstream.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

ROOT_TOKEN = "<root>"
_LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_FORBIDDEN = set(" \t\n|:")


class TreeError(ValueError):
    """Raised on malformed trees or on invalid state/action queries."""


@dataclass(frozen=True)
class StateNode:
    id: str
    actions: tuple[str, ...] = ()
    children: tuple[str, ...] = ()
    terminal_reward: float | None = None

    @property
    def is_terminal(self) -> bool:
        return not self.actions


@dataclass(frozen=True)
class TreeMdp:
    """Immutable rooted tree of states.

    The constructor validates every structural invariant and precomputes
    integer indices so the evaluators can work on flat arrays. Each
    (non-terminal state, action) pair gets a slot in ``[0, n_pairs)``; the
    slots of state ``i`` are ``pair_offset[i] : pair_offset[i] + n_actions[i]``.
    """

    nodes: tuple[StateNode, ...]
    root: str = ""
    reward_scale: float = 1.0

    index: dict[str, int] = field(init=False, repr=False, compare=False)
    child_index: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    parent: tuple[int, ...] = field(init=False, repr=False, compare=False)
    pair_offset: np.ndarray = field(init=False, repr=False, compare=False)
    n_actions: np.ndarray = field(init=False, repr=False, compare=False)
    n_pairs: int = field(init=False, repr=False, compare=False)
    order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.reward_scale > 0:
            raise TreeError(f"reward_scale must be positive, got {self.reward_scale}")
        index: dict[str, int] = {}
        for i, node in enumerate(self.nodes):
            if node.id in index:
                raise TreeError(f"duplicate state id {node.id!r}")
            index[node.id] = i
        if self.root not in index:
            raise TreeError(f"root {self.root!r} is not a node")

        parent = [-1] * len(self.nodes)
        child_index = []
        for i, node in enumerate(self.nodes):
            if len(node.actions) != len(node.children):
                raise TreeError(f"state {node.id!r}: actions and children differ in length")
            if len(set(node.actions)) != len(node.actions):
                raise TreeError(f"state {node.id!r}: repeated action label")
            if node.is_terminal:
                if node.terminal_reward not in (0.0, self.reward_scale):
                    raise TreeError(
                        f"terminal {node.id!r} has reward {node.terminal_reward!r}, "
                        f"expected 0 or {self.reward_scale}"
                    )
            elif node.terminal_reward is not None:
                raise TreeError(f"internal state {node.id!r} carries a terminal reward")
            kids = []
            for c in node.children:
                if c not in index:
                    raise TreeError(f"state {node.id!r}: unknown child {c!r}")
                j = index[c]
                if parent[j] != -1 or j == index[self.root]:
                    raise TreeError(f"state {c!r} has more than one parent")
                parent[j] = i
                kids.append(j)
            child_index.append(tuple(kids))

        # Reachability census from the root; every node must be visited once.
        root_i = index[self.root]
        order = []
        queue = deque([root_i])
        while queue:
            i = queue.popleft()
            order.append(i)
            queue.extend(child_index[i])
        if len(order) != len(self.nodes):
            raise TreeError("tree has nodes unreachable from the root")

        n_actions = np.array([len(n.actions) for n in self.nodes], dtype=np.int64)
        pair_offset = np.concatenate([[0], np.cumsum(n_actions)[:-1]]).astype(np.int64)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "child_index", tuple(child_index))
        object.__setattr__(self, "parent", tuple(parent))
        object.__setattr__(self, "n_actions", n_actions)
        object.__setattr__(self, "pair_offset", pair_offset)
        object.__setattr__(self, "n_pairs", int(n_actions.sum()))
        object.__setattr__(self, "order", tuple(order))

    # -- lookup -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, s: str) -> StateNode:
        try:
            return self.nodes[self.index[s]]
        except KeyError:
            raise TreeError(f"unknown state {s!r}") from None

    @property
    def root_index(self) -> int:
        return self.index[self.root]

    def is_terminal(self, s: str) -> bool:
        return self.node(s).is_terminal

    def pair(self, s: str, a: str) -> int:
        """Flat slot of the (state, action) pair."""
        node = self.node(s)
        try:
            k = node.actions.index(a)
        except ValueError:
            raise TreeError(f"action {a!r} not available at {s!r}") from None
        return int(self.pair_offset[self.index[s]]) + k

    def pairs(self) -> Iterator[tuple[str, str]]:
        """All (state, action) pairs in construction order."""
        for node in self.nodes:
            for a in node.actions:
                yield node.id, a

    def leaves(self) -> list[StateNode]:
        return [n for n in self.nodes if n.is_terminal]

    def rewarded_leaves(self) -> list[str]:
        return [n.id for n in self.nodes if n.is_terminal and n.terminal_reward > 0]

    def postorder(self) -> list[int]:
        """Node indices with every child before its parent."""
        return list(reversed(self.order))

    def depth(self) -> int:
        depth = [0] * len(self.nodes)
        for i in self.order:
            for j in self.child_index[i]:
                depth[j] = depth[i] + 1
        return max(depth)


def step(mdp: TreeMdp, s: str, a: str) -> str:
    node = mdp.node(s)
    if node.is_terminal:
        raise TreeError(f"state {s!r} is terminal")
    try:
        return node.children[node.actions.index(a)]
    except ValueError:
        raise TreeError(f"action {a!r} not available at {s!r}") from None


def terminal_reward(mdp: TreeMdp, s: str) -> float:
    node = mdp.node(s)
    if not node.is_terminal:
        raise TreeError(f"state {s!r} is not terminal")
    return node.terminal_reward


class _Segments:
    """Per-state segment bookkeeping over the flat pair layout."""

    def __init__(self, mdp: TreeMdp):
        internal = np.flatnonzero(mdp.n_actions > 0)
        self.starts = mdp.pair_offset[internal]
        self.sizes = mdp.n_actions[internal]
        self.seg_of_pair = np.repeat(np.arange(len(internal)), self.sizes)
        self.seg_of_node = np.full(len(mdp), -1)
        self.seg_of_node[internal] = np.arange(len(internal))

    def sum(self, x: np.ndarray) -> np.ndarray:
        return np.add.reduceat(x, self.starts)

    def max(self, x: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(x, self.starts)

    def argmax_first(self, x: np.ndarray) -> np.ndarray:
        """Flat index of the first maximal entry of each segment."""
        hits = np.flatnonzero(x == self.max(x)[self.seg_of_pair])
        _, first = np.unique(self.seg_of_pair[hits], return_index=True)
        return hits[first]


def segments(mdp: TreeMdp) -> _Segments:
    # Cached on the (immutable) tree instance.
    seg = mdp.__dict__.get("_segments")
    if seg is None:
        seg = _Segments(mdp)
        object.__setattr__(mdp, "_segments", seg)
    return seg


def build_from_sequences(
    sequences: Iterable[Sequence[str]],
    rewarded: Iterable[Sequence[str]] = (),
    *,
    reward_scale: float = 1.0,
    sep: str = "",
) -> TreeMdp:
    """Build the trie whose leaves are exactly ``sequences``.

    No sequence may be a proper prefix of another. State ids are the action
    labels joined by ``sep``.
    """
    rewarded_set = {tuple(r) for r in rewarded}
    children: dict[tuple[str, ...], list[str]] = {(): []}
    leaves: set[tuple[str, ...]] = set()
    for seq in sequences:
        seq = tuple(seq)
        if not seq:
            raise TreeError("empty action sequence")
        for k in range(len(seq)):
            prefix = seq[:k]
            if prefix in leaves:
                raise TreeError(f"sequence {prefix!r} is a prefix of {seq!r}")
            kids = children.setdefault(prefix, [])
            if seq[k] not in kids:
                kids.append(seq[k])
        if children.get(seq):
            raise TreeError(f"sequence {seq!r} is a prefix of another sequence")
        children.setdefault(seq, [])
        leaves.add(seq)
    unknown = rewarded_set - leaves
    if unknown:
        raise TreeError(f"rewarded sequences not in tree: {sorted(unknown)[:3]}")

    nodes = []
    queue = deque([()])
    while queue:
        path = queue.popleft()
        kids = children[path]
        sid = sep.join(path)
        if kids:
            nodes.append(
                StateNode(sid, tuple(kids), tuple(sep.join(path + (a,)) for a in kids))
            )
            queue.extend(path + (a,) for a in kids)
        else:
            r = reward_scale if path in rewarded_set else 0.0
            nodes.append(StateNode(sid, terminal_reward=r))
    return TreeMdp(tuple(nodes), root="", reward_scale=reward_scale)


DIDACTIC_ACTIONS = ("A", "B", "C", "D")
DIDACTIC_REWARDED = ("ACD", "BDC", "CAB", "DBA")


def build_didactic_mdp(reward_scale: float = 1.0) -> TreeMdp:
    """Depth-3 complete 4-ary tree; four of the 64 leaves pay off."""
    seqs = list(itertools.product(DIDACTIC_ACTIONS, repeat=3))
    return build_from_sequences(
        seqs, [tuple(s) for s in DIDACTIC_REWARDED], reward_scale=reward_scale
    )


@dataclass(frozen=True)
class RandomTreeParams:
    max_depth: int = 4
    branching: tuple[int, int] = (1, 4)
    reward_leaf_fraction: float = 0.2
    seed: int = 0
    force_reward: bool = True
    reward_scale: float = 1.0
    # Leaves may appear before max_depth with this probability per internal node.
    early_stop: float = 0.0

    def __post_init__(self) -> None:
        lo, hi = self.branching
        if self.max_depth < 1:
            raise TreeError("max_depth must be >= 1")
        if hi < 1 or lo < 1 or lo > hi:
            raise TreeError(f"invalid branching range {self.branching}")
        if hi > len(_LETTERS):
            raise TreeError(f"branching above {len(_LETTERS)} is not supported")
        if not 0.0 <= self.reward_leaf_fraction <= 1.0:
            raise TreeError("reward_leaf_fraction must be in [0, 1]")
        if not 0.0 <= self.early_stop < 1.0:
            raise TreeError("early_stop must be in [0, 1)")


def build_random_tree(params: RandomTreeParams) -> TreeMdp:
    """Seeded random tree; node and action order are a function of the seed only."""
    rng = np.random.default_rng(params.seed)
    lo, hi = params.branching
    nodes: list[StateNode] = []
    queue = deque([""])
    while queue:
        sid = queue.popleft()
        depth = len(sid)
        leaf = depth >= params.max_depth or (
            depth > 0 and params.early_stop > 0 and rng.random() < params.early_stop
        )
        if leaf:
            rewarded = rng.random() < params.reward_leaf_fraction
            nodes.append(
                StateNode(sid, terminal_reward=params.reward_scale if rewarded else 0.0)
            )
            continue
        k = int(rng.integers(lo, hi + 1))
        actions = tuple(_LETTERS[:k])
        nodes.append(StateNode(sid, actions, tuple(sid + a for a in actions)))
        queue.extend(sid + a for a in actions)

    if params.force_reward and not any(n.terminal_reward for n in nodes if n.is_terminal):
        leaf_ids = [i for i, n in enumerate(nodes) if n.is_terminal]
        i = leaf_ids[int(rng.integers(len(leaf_ids)))]
        nodes[i] = StateNode(nodes[i].id, terminal_reward=params.reward_scale)
    return TreeMdp(tuple(nodes), root="", reward_scale=params.reward_scale)


# -- text serialization ---------------------------------------------------


def _check_token(tok: str, what: str) -> None:
    if not tok or tok == ROOT_TOKEN or _FORBIDDEN & set(tok):
        raise TreeError(f"{what} {tok!r} cannot be serialized")


def _fmt_id(s: str, root: str) -> str:
    if s == root:
        return ROOT_TOKEN
    _check_token(s, "state id")
    return s


def dumps(mdp: TreeMdp) -> str:
    lines = [f"tree R={mdp.reward_scale!r} root={_fmt_id(mdp.root, mdp.root)}"]
    for node in mdp.nodes:
        sid = _fmt_id(node.id, mdp.root)
        if node.is_terminal:
            lines.append(f"{sid} | | terminal:{node.terminal_reward!r}")
        else:
            for a in node.actions:
                _check_token(a, "action")
            moves = " ".join(
                f"{a}:{_fmt_id(c, mdp.root)}" for a, c in zip(node.actions, node.children)
            )
            lines.append(f"{sid} | {moves} |")
    return "\n".join(lines) + "\n"


def loads(text: str) -> TreeMdp:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("tree "):
        raise TreeError("missing 'tree R=<float>' header")
    header = dict(kv.split("=", 1) for kv in lines[0].split()[1:])
    try:
        scale = float(header["R"])
    except (KeyError, ValueError):
        raise TreeError(f"bad header {lines[0]!r}") from None
    root_tok = header.get("root", ROOT_TOKEN)
    root = "" if root_tok == ROOT_TOKEN else root_tok

    def parse_id(tok: str) -> str:
        return root if tok == ROOT_TOKEN else tok

    nodes = []
    for ln in lines[1:]:
        parts = [p.strip() for p in ln.split("|")]
        if len(parts) != 3:
            raise TreeError(f"bad node line {ln!r}")
        sid, moves, term = parts
        if term:
            if moves or not term.startswith("terminal:"):
                raise TreeError(f"bad node line {ln!r}")
            nodes.append(StateNode(parse_id(sid), terminal_reward=float(term[len("terminal:"):])))
        else:
            pairs = [m.split(":", 1) for m in moves.split()]
            if not pairs or any(len(p) != 2 for p in pairs):
                raise TreeError(f"bad node line {ln!r}")
            nodes.append(
                StateNode(
                    parse_id(sid),
                    tuple(a for a, _ in pairs),
                    tuple(parse_id(c) for _, c in pairs),
                )
            )
    return TreeMdp(tuple(nodes), root=root, reward_scale=scale)


def save(mdp: TreeMdp, path: str | Path) -> None:
    Path(path).write_text(dumps(mdp))


def load(path: str | Path) -> TreeMdp:
    return loads(Path(path).read_text())
