"""Per-node metrics: toxic accumulation, opinions, engagement, depth, leaf flag.

Toxic accumulation (TA) of a node is its toxicity and its children's TA values
averaged with equal weight::

    TA(v) = (toxicity(v) + sum(TA(c) for c in children(v))) / (len(children(v)) + 1)

so a leaf's TA is its own toxicity and deeper replies are discounted by every
branching level above them.
"""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass
from functools import cached_property
from typing import IO, TYPE_CHECKING

import numpy as np

from . import _kernels
from .errors import MetricError

if TYPE_CHECKING:
    from .model import ConversationForest, ConversationTree, GroupLabel, NodeId


@dataclass(frozen=True)
class NodeMetrics:
    id: str
    toxicity: float
    ta: float
    opinions: int
    engagement: int
    depth: int
    is_leaf: bool

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "toxicity": self.toxicity,
            "ta": self.ta,
            "opinions": self.opinions,
            "engagement": self.engagement,
            "depth": self.depth,
            "is_leaf": self.is_leaf,
        }


@dataclass(frozen=True)
class MetricArrays:
    """Metric columns aligned with :class:`ForestArrays` node order."""

    toxicity: np.ndarray  # missing-text nodes imputed to 0.0
    ta: np.ndarray
    opinions: np.ndarray
    engagement: np.ndarray
    depth: np.ndarray
    is_leaf: np.ndarray
    imputed: int


class ForestArrays:
    """Flattened, index-based view of a forest.

    Nodes are numbered in per-tree pre-order, trees concatenated in forest
    order. ``toxicity`` holds NaN where a node is unscored.
    """

    def __init__(self, ids: list[str], parent: np.ndarray, tree_of: np.ndarray,
                 toxicity: np.ndarray, text_missing: np.ndarray,
                 labels: tuple[GroupLabel, ...], word_counts: np.ndarray | None = None):
        self.ids = ids
        self.parent = parent
        self.tree_of = tree_of
        self.toxicity = toxicity
        self.text_missing = text_missing
        self.labels = labels
        self.word_counts = word_counts
        self.child_ptr, self.child_idx = _kernels.child_csr(parent)

    @classmethod
    def from_forest(cls, forest: ConversationForest) -> ForestArrays:
        n = forest.n_nodes
        ids: list[str] = []
        parent = np.empty(n, dtype=np.int64)
        tree_of = np.empty(n, dtype=np.int64)
        tox = np.empty(n, dtype=np.float64)
        missing = np.empty(n, dtype=bool)
        words = np.empty(n, dtype=np.int64)
        nan = float("nan")
        i = 0
        for t_idx, tree in enumerate(forest.trees):
            local: dict[str, int] = {}
            for node in tree.nodes:
                local[node.id] = i
                ids.append(node.id)
                parent[i] = -1 if node.parent is None else local[node.parent]
                tox[i] = nan if node.toxicity is None else node.toxicity
                missing[i] = node.text_missing
                words[i] = 0 if node.text_missing else len(node.body.split())
                i += 1
            tree_of[i - len(tree.nodes):i] = t_idx
        return cls(ids, parent, tree_of, tox, missing, tuple(forest.group_labels), words)

    @classmethod
    def from_parents(cls, parent: Iterable[int], toxicity: Iterable[float],
                     ids: list[str] | None = None) -> ForestArrays:
        """Build from a parent-index array (every parent index below its child)."""
        from .model import GroupLabel

        parent = np.asarray(parent, dtype=np.int64)
        n = parent.shape[0]
        if np.any(parent >= np.arange(n)):
            raise ValueError("parent indices must precede their children")
        roots = parent < 0
        tree_of = np.cumsum(roots) - 1
        labels = tuple(GroupLabel("synthetic") for _ in range(int(roots.sum())))
        return cls(ids or [str(i) for i in range(n)], parent, tree_of,
                   np.asarray(toxicity, dtype=np.float64), np.zeros(n, dtype=bool), labels)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_trees(self) -> int:
        return len(self.labels)

    @cached_property
    def n_children(self) -> np.ndarray:
        return np.diff(self.child_ptr)

    @cached_property
    def depth(self) -> np.ndarray:
        return _kernels.node_depths(self.parent, self.child_ptr, self.child_idx)

    @cached_property
    def is_root(self) -> np.ndarray:
        return self.parent < 0

    @cached_property
    def root_index(self) -> np.ndarray:
        """Global index of every tree's root."""
        return np.flatnonzero(self.is_root)

    @cached_property
    def node_community(self) -> np.ndarray:
        names = np.array([lab.community for lab in self.labels], dtype=object)
        return names[self.tree_of] if len(names) else np.empty(0, dtype=object)

    @cached_property
    def node_consensual(self) -> np.ndarray:
        flags = np.array([lab.consensual for lab in self.labels], dtype=bool)
        return flags[self.tree_of] if len(flags) else np.empty(0, dtype=bool)

    @cached_property
    def metrics(self) -> MetricArrays:
        return compute_forest_metrics(self)

    def select_trees(self, keep: np.ndarray) -> ForestArrays:
        """Sub-view holding only the trees where ``keep`` is true."""
        keep = np.asarray(keep, dtype=bool)
        mask = keep[self.tree_of]
        idx = np.flatnonzero(mask)
        remap = np.full(len(self) + 1, -1, dtype=np.int64)
        remap[idx] = np.arange(idx.size)
        parent = remap[self.parent[idx]]  # -1 maps through slot n
        new_tree = np.cumsum(keep) - 1
        sub = ForestArrays(
            [self.ids[i] for i in idx], parent, new_tree[self.tree_of[idx]],
            self.toxicity[idx], self.text_missing[idx],
            tuple(lab for lab, k in zip(self.labels, keep) if k),
            None if self.word_counts is None else self.word_counts[idx],
        )
        return sub


def compute_forest_metrics(arrays: ForestArrays, backend: str | None = None) -> MetricArrays:
    """Single post-order pass over every tree of the flattened forest.

    Raises:
        MetricError: a node with text is unscored.
    """
    tox = arrays.toxicity
    unscored = np.isnan(tox)
    bad = unscored & ~arrays.text_missing
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise MetricError(f"node {arrays.ids[first]!r} has no toxicity score "
                          f"({int(bad.sum())} unscored nodes in total)")
    filled = np.where(unscored, 0.0, tox)
    depth = arrays.depth
    ta, eng = _kernels.subtree_metrics(arrays.parent, arrays.child_ptr, arrays.child_idx,
                                       depth, filled, backend=backend)
    opinions = arrays.n_children
    return MetricArrays(filled, ta, opinions, eng, depth, opinions == 0, int(unscored.sum()))


def compute_metrics(tree: ConversationTree, backend: str | None = None) -> dict[NodeId, NodeMetrics]:
    """Metrics for every node of one tree, keyed by node id.

    Missing-text nodes without a score count as toxicity 0.0.
    """
    from .model import ConversationForest, GroupLabel

    arrays = ForestArrays.from_forest(ConversationForest((tree,), (GroupLabel(""),)))
    m = compute_forest_metrics(arrays, backend=backend)
    return {
        nid: NodeMetrics(nid, float(m.toxicity[i]), float(m.ta[i]), int(m.opinions[i]),
                         int(m.engagement[i]), int(m.depth[i]), bool(m.is_leaf[i]))
        for i, nid in enumerate(arrays.ids)
    }


def ta_weights(tree: ConversationTree, node: NodeId) -> dict[NodeId, float]:
    """Closed-form TA weights of every node in the subtree under ``node``.

    A descendant's weight is the product of ``1 / (children(a) + 1)`` over
    every node ``a`` on the path from ``node`` down to it, inclusive; the
    weighted toxicity sum equals ``TA(node)``.
    """
    weights = {node: 1.0 / (len(tree.children(node)) + 1)}
    for n in tree.walk(node):
        w = weights[n.id]
        for c in tree.child_index[n.id]:
            weights[c] = w / (len(tree.child_index[c]) + 1)
    return weights


def opinions(tree: ConversationTree, node: NodeId) -> int:
    return len(tree.children(node))


def engagement(tree: ConversationTree, node: NodeId) -> int:
    """Edges on the longest downward path from ``node``."""
    base = tree.depth(node)
    return max(tree.depth(n.id) for n in tree.walk(node)) - base


def write_metrics_dump(arrays: ForestArrays, fh: IO[str]) -> int:
    """Line-delimited metrics dump; returns records written."""
    m = arrays.metrics
    for i, nid in enumerate(arrays.ids):
        fh.write(json.dumps({
            "id": nid,
            "toxicity": float(m.toxicity[i]),
            "ta": float(m.ta[i]),
            "opinions": int(m.opinions[i]),
            "engagement": int(m.engagement[i]),
            "depth": int(m.depth[i]),
            "is_leaf": bool(m.is_leaf[i]),
        }) + "\n")
    return len(arrays.ids)
