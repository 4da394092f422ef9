import numpy as np
import pytest

from convtox.analysis import rq4_participation
from convtox.errors import ParameterError
from convtox.synth import SynthParams, synth_arrays, synth_forest, to_records


def test_same_seed_identical():
    p = SynthParams(trees=40)
    a, b = synth_forest(p, 3), synth_forest(p, 3)
    assert a == b
    assert synth_forest(p, 4) != a


def test_structure_and_ranges():
    p = SynthParams(trees=50, max_children=4, max_depth=6)
    arr = synth_arrays(p, 1)
    assert np.all(arr.parent < np.arange(len(arr)))
    assert arr.depth.max() <= 6
    assert np.all(np.bincount(arr.parent[arr.parent >= 0], minlength=len(arr)) <= 4)
    assert np.all((arr.toxicity >= 0) & (arr.toxicity <= 1))
    assert np.all(arr.created_utc[arr.parent >= 0] > arr.created_utc[arr.parent[arr.parent >= 0]])


def test_contagion_scores_split_at_half():
    arr = synth_arrays(SynthParams(trees=200), 2)
    tox = arr.toxicity
    assert np.all(tox != 0.5)


def test_null_model_rates_match():
    p = SynthParams(trees=4000, mean_children=4.0, depth_decay=0.8, base_toxic_rate=0.25,
                    contagion_rate=0.25, with_text=False)
    forest = synth_forest(p, 10)
    _, pcs = rq4_participation(forest)
    assert pcs.toxic_parent_pairs + pcs.nontoxic_parent_pairs >= 100_000
    assert abs(pcs.toxic_parent_child_toxic_rate - pcs.nontoxic_parent_child_toxic_rate) < 0.01


def test_linear_model_early_levels_uniform():
    p = SynthParams(trees=300, regression_betas=(0.05, 0.13, 0.07), with_text=False)
    arr = synth_arrays(p, 0)
    shallow = arr.toxicity[arr.depth < 2]
    assert shallow.min() < 0.1 and shallow.max() > 0.9


def test_bodies_follow_scores():
    from convtox.scoring import lexicon_score

    arr = synth_arrays(SynthParams(trees=40), 5)
    recs = to_records(arr)
    lex = np.array([lexicon_score(r.body) for r in recs])
    assert np.corrcoef(lex, arr.toxicity)[0, 1] > 0.9


def test_communities_and_consent():
    p = SynthParams(trees=9, communities=("a", "b", "c"), consensual_communities=("b",))
    forest = synth_forest(p, 0)
    for tree, lab in zip(forest.trees, forest.group_labels):
        assert lab.community == tree.root_node.community
        assert lab.consensual == (lab.community == "b")
        assert {n.community for n in tree.nodes} == {lab.community}


@pytest.mark.parametrize("kw", [
    {"trees": 0}, {"base_toxic_rate": 1.5}, {"contagion_rate": -0.1}, {"depth_decay": 2},
    {"mean_children": -1}, {"noise": -0.1}, {"regression_betas": (0.1,)}, {"communities": ()},
])
def test_invalid_params(kw):
    with pytest.raises(ParameterError):
        synth_arrays(SynthParams(**kw), 0)


def test_params_dict_roundtrip():
    p = SynthParams(trees=3, regression_betas=(0.1, 0.2), communities=("x",))
    assert SynthParams.from_dict(p.to_dict()) == p
