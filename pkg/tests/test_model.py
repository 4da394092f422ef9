import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fig1_records, make_node
from convtox.errors import MalformedPostError, StructuralError
from convtox.model import (
    ConversationForest,
    GroupLabel,
    IngestStats,
    ancestors,
    branches,
    build_forest,
)
from oracles import random_tree_spec, records_from_parents


def test_minimal_tree():
    forest, stats = build_forest([make_node("r"), make_node("a", "r"), make_node("b", "r")])
    assert len(forest) == 1
    assert len(forest.trees[0]) == 3
    assert stats == IngestStats(accepted=3, orphans_dropped=0, duplicates_rejected=0,
                                deleted_retained=0)


def test_fig1_structure(fig1_tree):
    assert fig1_tree.root == "0"
    assert fig1_tree.child_index["0"] == ("1", "2")
    assert fig1_tree.child_index["1"] == ("1.1", "1.2")
    assert fig1_tree.max_depth() == 3
    assert fig1_tree.depth("1.1.1") == 3


def test_orphan_dropped():
    forest, stats = build_forest([make_node("r"), make_node("x", "missing")])
    assert [len(t) for t in forest.trees] == [1]
    assert stats.orphans_dropped == 1


def test_descendants_of_orphans_are_orphans():
    recs = [make_node("r"), make_node("x", "missing"), make_node("y", "x"), make_node("z", "y")]
    forest, stats = build_forest(recs)
    assert stats.accepted == 1
    assert stats.orphans_dropped == 3
    assert stats.input_records == 4


def test_duplicates_rejected_first_wins():
    recs = [make_node("r"), make_node("a", "r", body="first"), make_node("a", "r", body="second")]
    forest, stats = build_forest(recs)
    assert stats.duplicates_rejected == 1
    assert forest.node("a").body == "first"


def test_cycle_names_node():
    recs = [make_node("r"), make_node("a", "b"), make_node("b", "a")]
    with pytest.raises(StructuralError) as err:
        build_forest(recs)
    assert err.value.node_id in {"a", "b"}


def test_no_root_is_malformed():
    with pytest.raises(MalformedPostError):
        build_forest([make_node("a", "b"), make_node("b", "a")])


def test_empty_input():
    forest, stats = build_forest([])
    assert len(forest) == 0 and stats.accepted == 0


def test_sibling_order_by_time_then_id():
    recs = [make_node("r"), make_node("c", "r", created=5), make_node("b", "r", created=5),
            make_node("a", "r", created=9)]
    forest, _ = build_forest(recs)
    assert forest.trees[0].child_index["r"] == ("b", "c", "a")


def test_multiple_roots_ordered():
    recs = [make_node("late", created=10), make_node("early", created=1)]
    forest, _ = build_forest(recs)
    assert [t.root for t in forest.trees] == ["early", "late"]


def test_deleted_retained():
    recs = [make_node("r"), make_node("d", "r", body="[deleted]", text_missing=True),
            make_node("k", "d")]
    forest, stats = build_forest(recs)
    assert stats.deleted_retained == 1
    assert len(forest.trees[0]) == 3


def test_duplicate_ids_across_trees_rejected():
    f1, _ = build_forest([make_node("r1"), make_node("x", "r1")])
    f2, _ = build_forest([make_node("r2"), make_node("x", "r2")])
    with pytest.raises(StructuralError):
        ConversationForest.merge([f1, f2])


def test_group_label_count_checked():
    forest, _ = build_forest([make_node("r")])
    with pytest.raises(ValueError):
        ConversationForest(forest.trees, ())


def test_select_and_relabel():
    forest, _ = build_forest([make_node("r1", created=1), make_node("r2", created=2)])
    forest = forest.relabel([GroupLabel("a", True), GroupLabel("b", False)])
    sub = forest.select(lambda lab: lab.consensual)
    assert [t.root for t in sub.trees] == ["r1"]


def test_ancestors(fig1_tree):
    assert ancestors(fig1_tree, "2.1", 2) == ["2", "0"]
    assert ancestors(fig1_tree, "0", 5) == []
    assert ancestors(fig1_tree, "1", 5) == ["0"]
    with pytest.raises(KeyError):
        ancestors(fig1_tree, "nope", 1)
    with pytest.raises(ValueError):
        ancestors(fig1_tree, "1", 0)


def test_branches(fig1_tree):
    assert branches(fig1_tree) == [["0", "1", "1.1", "1.1.1"], ["0", "1", "1.2"], ["0", "2", "2.1"]]
    single, _ = build_forest([make_node("r")])
    assert branches(single.trees[0]) == [["r"]]


def test_branches_perfect_binary():
    parents = {"r": None, "a": "r", "b": "r", "aa": "a", "ab": "a", "ba": "b", "bb": "b"}
    forest, _ = build_forest([make_node(k, v) for k, v in parents.items()])
    paths = branches(forest.trees[0])
    assert len(paths) == 4 and all(len(p) == 3 for p in paths)


def test_walk_and_lookup(fig1_tree):
    assert fig1_tree.subtree_ids("1") == ["1", "1.1", "1.1.1", "1.2"]
    assert [n.id for n in fig1_tree.walk()] == [n.id for n in fig1_tree.nodes]
    with pytest.raises(KeyError):
        fig1_tree.children("nope")


def test_rebuild_is_idempotent():
    forest, _ = build_forest(fig1_records())
    again, _ = build_forest(list(forest.nodes()))
    assert again == forest


def _check_structure(forest, n_input):
    assert forest.n_nodes == n_input
    for tree in forest.trees:
        ids = [n.id for n in tree.nodes]
        assert len(set(ids)) == len(ids)
        assert tree.nodes[0].parent is None
        assert sum(len(c) for c in tree.child_index.values()) == len(tree) - 1
        pos = {nid: i for i, nid in enumerate(ids)}
        for n in tree.nodes[1:]:
            assert n.id in tree.child_index[n.parent]
            assert pos[n.parent] < pos[n.id]
        leaves = tree.leaves()
        paths = branches(tree)
        assert len(paths) == len(leaves)
        assert sorted(p[-1] for p in paths) == sorted(leaves)
        for n in tree.nodes[:: max(1, len(tree) // 50)]:
            k = 3
            assert len(ancestors(tree, n.id, k)) == min(k, tree.depth(n.id))


def test_random_tree_invariants():
    rng = np.random.default_rng(11)
    for t in range(200):
        parent, _, _ = random_tree_spec(rng, max_nodes=2_000, deep_cap=500)
        recs = records_from_parents(parent, prefix=f"t{t}_", shuffle_rng=rng)
        forest, stats = build_forest(recs)
        assert len(forest) == 1
        assert stats.accepted == len(recs)
        _check_structure(forest, len(recs))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 0.999), min_size=0, max_size=60), st.randoms())
def test_build_is_order_independent(fracs, rnd):
    parent = np.array([-1] + [int(f * (i + 1)) for i, f in enumerate(fracs)], dtype=np.int64)
    recs = records_from_parents(parent)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert build_forest(recs)[0] == build_forest(shuffled)[0]
