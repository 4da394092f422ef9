"""Conversation forest data model and tree reconstruction from flat records."""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, NamedTuple

from .errors import MalformedPostError, StructuralError

if TYPE_CHECKING:
    from .metrics import ForestArrays

NodeId = str

DELETION_PLACEHOLDERS = frozenset({"[deleted]", "[removed]"})


class ConversationNode(NamedTuple):
    """One post (``parent is None``) or response.

    A named tuple keeps million-node corpora cheap to build; field ranges are
    checked by the parsers and by :func:`check_node`.
    """

    id: NodeId
    parent: NodeId | None
    author: str
    created_utc: int
    vote_score: int
    body: str
    community: str
    toxicity: float | None = None
    text_missing: bool = False
    text_repaired: bool = False

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def with_toxicity(self, toxicity: float | None) -> ConversationNode:
        return ConversationNode(self.id, self.parent, self.author, self.created_utc,
                                self.vote_score, self.body, self.community, toxicity,
                                self.text_missing, self.text_repaired)


def check_node(node: ConversationNode) -> ConversationNode:
    if not node.id:
        raise ValueError("node id must be non-empty")
    if node.toxicity is not None and not 0.0 <= node.toxicity <= 1.0:
        raise ValueError(f"toxicity {node.toxicity!r} of node {node.id} outside [0, 1]")
    return node


@dataclass(frozen=True)
class GroupLabel:
    community: str
    consensual: bool = False


@dataclass(frozen=True)
class IngestStats:
    accepted: int = 0
    orphans_dropped: int = 0
    duplicates_rejected: int = 0
    deleted_retained: int = 0

    def __add__(self, other: IngestStats) -> IngestStats:
        return IngestStats(
            self.accepted + other.accepted,
            self.orphans_dropped + other.orphans_dropped,
            self.duplicates_rejected + other.duplicates_rejected,
            self.deleted_retained + other.deleted_retained,
        )

    @property
    def input_records(self) -> int:
        return self.accepted + self.orphans_dropped + self.duplicates_rejected


def _sibling_key(node: ConversationNode) -> tuple[int, str]:
    return (node.created_utc, node.id)


@dataclass(frozen=True)
class ConversationTree:
    """A rooted conversation.

    ``nodes`` is stored in pre-order with siblings sorted by
    ``(created_utc, id)``; ``child_index`` has an entry for every node.
    """

    root: NodeId
    nodes: tuple[ConversationNode, ...]
    child_index: dict[NodeId, tuple[NodeId, ...]] = field(repr=False)

    @cached_property
    def _by_id(self) -> dict[NodeId, ConversationNode]:
        return {n.id: n for n in self.nodes}

    @cached_property
    def _depths(self) -> dict[NodeId, int]:
        depth = {self.root: 0}
        for n in self.nodes[1:]:
            depth[n.id] = depth[n.parent] + 1
        return depth

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._by_id

    def node(self, node_id: NodeId) -> ConversationNode:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise KeyError(f"node {node_id!r} not in tree rooted at {self.root!r}") from None

    def children(self, node_id: NodeId) -> tuple[NodeId, ...]:
        self.node(node_id)
        return self.child_index[node_id]

    def depth(self, node_id: NodeId) -> int:
        self.node(node_id)
        return self._depths[node_id]

    @property
    def root_node(self) -> ConversationNode:
        return self.nodes[0]

    def leaves(self) -> list[NodeId]:
        return [n.id for n in self.nodes if not self.child_index[n.id]]

    def max_depth(self) -> int:
        return max(self._depths.values())

    def walk(self, start: NodeId | None = None) -> Iterator[ConversationNode]:
        """Pre-order walk of the subtree under ``start`` (default: root)."""
        stack = [self.root if start is None else start]
        self.node(stack[0])
        while stack:
            nid = stack.pop()
            yield self._by_id[nid]
            stack.extend(reversed(self.child_index[nid]))

    def subtree_ids(self, start: NodeId) -> list[NodeId]:
        return [n.id for n in self.walk(start)]


@dataclass(frozen=True)
class ConversationForest:
    trees: tuple[ConversationTree, ...]
    group_labels: tuple[GroupLabel, ...]

    def __post_init__(self):
        if len(self.trees) != len(self.group_labels):
            raise ValueError("every tree needs exactly one group label")

    @cached_property
    def _tree_of(self) -> dict[NodeId, int]:
        index: dict[NodeId, int] = {}
        for t_idx, tree in enumerate(self.trees):
            for n in tree.nodes:
                if n.id in index:
                    raise StructuralError(f"node id {n.id!r} appears in more than one tree", n.id)
                index[n.id] = t_idx
        return index

    @cached_property
    def arrays(self) -> ForestArrays:
        """Flat array view used by metrics and analyses (computed once)."""
        from .metrics import ForestArrays

        return ForestArrays.from_forest(self)

    def __len__(self) -> int:
        return len(self.trees)

    @property
    def n_nodes(self) -> int:
        return sum(len(t) for t in self.trees)

    def nodes(self) -> Iterator[ConversationNode]:
        for tree in self.trees:
            yield from tree.nodes

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._tree_of

    def tree_of(self, node_id: NodeId) -> ConversationTree:
        return self.trees[self._tree_of[node_id]]

    def node(self, node_id: NodeId) -> ConversationNode:
        return self.tree_of(node_id).node(node_id)

    def check_unique_ids(self) -> None:
        self._tree_of  # noqa: B018 - raises on duplicates

    def relabel(self, labels: Sequence[GroupLabel]) -> ConversationForest:
        return ConversationForest(self.trees, tuple(labels))

    def select(self, predicate) -> ConversationForest:
        """Sub-forest of the trees whose label satisfies ``predicate``."""
        keep = [i for i, lab in enumerate(self.group_labels) if predicate(lab)]
        return ConversationForest(
            tuple(self.trees[i] for i in keep), tuple(self.group_labels[i] for i in keep)
        )

    @classmethod
    def merge(cls, forests: Iterable[ConversationForest]) -> ConversationForest:
        trees: list[ConversationTree] = []
        labels: list[GroupLabel] = []
        for f in forests:
            trees.extend(f.trees)
            labels.extend(f.group_labels)
        merged = cls(tuple(trees), tuple(labels))
        merged.check_unique_ids()
        return merged


def _assemble_tree(root: ConversationNode, by_id: dict[NodeId, ConversationNode],
                   children: dict[NodeId, list[NodeId]]) -> ConversationTree:
    ordered: list[ConversationNode] = []
    child_index: dict[NodeId, tuple[NodeId, ...]] = {}
    stack = [root.id]
    while stack:
        nid = stack.pop()
        ordered.append(by_id[nid])
        kids = children.get(nid)
        if kids:
            if len(kids) > 1:
                kids.sort(key=lambda c: _sibling_key(by_id[c]))
            child_index[nid] = tuple(kids)
            stack.extend(reversed(kids))
        else:
            child_index[nid] = ()
    return ConversationTree(root.id, tuple(ordered), child_index)


def build_forest(records: Iterable[ConversationNode]) -> tuple[ConversationForest, IngestStats]:
    """Reconstruct conversation trees from flat node records in any order.

    Duplicate ids after the first occurrence are rejected, records whose
    ancestor chain ends at an unknown parent id are dropped as orphans. Trees
    are ordered by their root's ``(created_utc, id)``.

    Raises:
        MalformedPostError: records were given but none of them is a root.
        StructuralError: the parent links contain a cycle.
    """
    by_id: dict[NodeId, ConversationNode] = {}
    duplicates = 0
    for rec in records:
        if not rec.id:
            raise StructuralError("record with empty id")
        if rec.id in by_id:
            duplicates += 1
        else:
            by_id[rec.id] = rec

    children: dict[NodeId, list[NodeId]] = {}
    roots: list[ConversationNode] = []
    for rec in by_id.values():
        if rec.parent is None:
            roots.append(rec)
        elif rec.parent in by_id:
            children.setdefault(rec.parent, []).append(rec.id)

    if by_id and not roots:
        raise MalformedPostError("post has no root record (every record names a parent)")

    roots.sort(key=_sibling_key)
    trees = [_assemble_tree(r, by_id, children) for r in roots]
    n_accepted = sum(len(t) for t in trees)

    orphans = 0
    if n_accepted < len(by_id):
        placed = {n.id for t in trees for n in t.nodes}
        status: dict[NodeId, bool] = {}  # True = orphan chain
        for start in sorted(set(by_id) - placed):
            if start in status:
                continue
            path: list[NodeId] = []
            on_path: set[NodeId] = set()
            cur: NodeId | None = start
            while True:
                if cur in status:
                    verdict = status[cur]
                    break
                if cur not in by_id:
                    verdict = True
                    break
                if cur in on_path:
                    raise StructuralError(f"cycle in parent links at node {cur!r}", cur)
                on_path.add(cur)
                path.append(cur)
                cur = by_id[cur].parent
            for nid in path:
                status[nid] = verdict
        orphans = sum(status.values())

    labels = tuple(GroupLabel(t.root_node.community) for t in trees)
    deleted = sum(1 for t in trees for n in t.nodes if n.text_missing)
    stats = IngestStats(n_accepted, orphans, duplicates, deleted)
    return ConversationForest(tuple(trees), labels), stats


def ancestors(tree: ConversationTree, node: NodeId, k: int) -> list[NodeId]:
    """Up to ``k`` ancestors of ``node``, nearest first."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    cur = tree.node(node).parent
    out: list[NodeId] = []
    while cur is not None and len(out) < k:
        out.append(cur)
        cur = tree.node(cur).parent
    return out


def branches(tree: ConversationTree) -> list[list[NodeId]]:
    """All root-to-leaf paths, in child order."""
    paths: list[list[NodeId]] = []
    stack: list[tuple[NodeId, int]] = [(tree.root, 0)]
    path: list[NodeId] = []
    while stack:
        nid, depth = stack.pop()
        del path[depth:]
        path.append(nid)
        kids = tree.child_index[nid]
        if not kids:
            paths.append(list(path))
        else:
            stack.extend((c, depth + 1) for c in reversed(kids))
    return paths
