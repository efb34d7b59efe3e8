import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdtree.core import (
    Dataset, Direction, Partition, Rule, Subgroup, assign, partition_from_tree, rule_matches,
)
from cdtree.errors import DataError, PartitionError
from cdtree.tree import TreeParams, fit_tree

from oracles import walk_leaf

LE, GT = Direction.LE, Direction.GT


def test_rule_boundary_goes_left():
    assert rule_matches(Rule(0, LE, 0.5), [0.5, 9.0])
    assert not rule_matches(Rule(0, GT, 0.5), [0.5, 9.0])
    assert rule_matches(Rule(1, LE, -0.5), [0.0, -1.0])


def test_rule_index_out_of_range():
    with pytest.raises(IndexError):
        rule_matches(Rule(3, LE, 0.0), [1.0, 2.0])


def test_rule_rejects_nonfinite_threshold():
    with pytest.raises(ValueError):
        Rule(0, LE, float("nan"))


def test_assign_trivial_partition():
    data = Dataset(np.random.default_rng(0).normal(size=(7, 2)), [0, 1] * 3 + [0], np.zeros(7))
    assert np.array_equal(assign(Partition((Subgroup(),)), data), np.zeros(7))


def test_assign_two_groups_boundary():
    part = Partition((Subgroup((Rule(0, LE, 0.0),)), Subgroup((Rule(0, GT, 0.0),))))
    assert assign(part, np.array([[-1.0], [2.0], [0.0]])).tolist() == [0, 1, 0]


def test_assign_rejects_overlap_and_gaps():
    overlap = Partition((Subgroup((Rule(0, LE, 1.0),)), Subgroup((Rule(0, GT, 0.0),))))
    with pytest.raises(PartitionError):
        assign(overlap, np.array([[0.5]]))
    gap = Partition((Subgroup((Rule(0, LE, 0.0),)), Subgroup((Rule(0, GT, 1.0),))))
    with pytest.raises(PartitionError):
        assign(gap, np.array([[0.5]]))


def _random_tree(seed, n=200, p=3, **kw):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    y = (x[:, 0] > 0) + 0.5 * (x[:, 1] > 0.3) + rng.normal(0, 0.2, n)
    return fit_tree(x, y, TreeParams(**kw))


def test_tree_partition_matches_traversal():
    tree = _random_tree(1, max_depth=2)
    assert tree.n_leaves == 4
    part = partition_from_tree(tree)
    assert len(part) == 4
    assert all(len(g.rules) == 2 for g in part.subgroups)
    x = np.random.default_rng(2).normal(size=(500, 3))
    leaves = list(tree.leaves)
    expected = [leaves.index(walk_leaf(tree, row)) for row in x]
    assert assign(part, x).tolist() == expected


def test_single_leaf_and_single_split():
    x = np.arange(10.0)[:, None]
    root = fit_tree(x, np.ones(10))
    part = partition_from_tree(root)
    assert len(part) == 1 and part.subgroups[0].rules == ()
    stump = fit_tree(np.array([[1.0], [2.0], [3.0], [4.0]]), np.array([0, 0, 1, 1.0]),
                     TreeParams(min_leaf=1, min_split=2))
    part = partition_from_tree(stump)
    assert [g.rules for g in part.subgroups] == [(Rule(0, LE, 2.5),), (Rule(0, GT, 2.5),)]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_partition_agrees_with_tree_on_random_points(seed):
    tree = _random_tree(seed, n=150, min_leaf=3, min_split=6)
    part = partition_from_tree(tree)
    x = np.random.default_rng(seed + 1).normal(size=(10_000, 3))
    leaves = tree.leaves
    assert np.array_equal(leaves[assign(part, x)], tree.apply(x))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), perm_seed=st.integers(0, 100))
def test_assign_permutation_relabels(seed, perm_seed):
    part = partition_from_tree(_random_tree(seed, n=120, min_leaf=3, min_split=6))
    perm = np.random.default_rng(perm_seed).permutation(len(part))
    shuffled = Partition(tuple(part.subgroups[k] for k in perm))
    x = np.random.default_rng(seed).normal(size=(300, 3))
    assert np.array_equal(perm[assign(shuffled, x)], assign(part, x))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_exact_threshold_routes_left(seed):
    tree = _random_tree(seed, n=100, min_leaf=3, min_split=6)
    part = partition_from_tree(tree)
    for node in tree.internal:
        row = np.zeros(3)
        row[tree.feature[node]] = tree.threshold[node]
        g = part.subgroups[assign(part, row[None, :])[0]]
        # the rule on this node's feature/threshold, if the row reaches it, is LE
        for r in g.rules:
            if r.feature_index == tree.feature[node] and r.threshold == tree.threshold[node]:
                assert r.direction is LE


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.array([[1.0], [np.nan]]), [0, 1], [1.0, 2.0])
    with pytest.raises(DataError):
        Dataset(np.ones((2, 1)), [0, 2], [1.0, 2.0])
    with pytest.raises(DataError):
        Dataset(np.ones((2, 2)), [0, 1], [1.0, 2.0], feature_names=("a", "a"))
    with pytest.raises(DataError):
        Dataset(np.ones((1, 1)), [0], [1.0])
    d = Dataset(np.ones((3, 2)), [0, 1, 1], [1.0, 2.0, 3.0])
    assert d.feature_names == ("X1", "X2") and d.unit_ids == (0, 1, 2)
    with pytest.raises(ValueError):
        d.x[0, 0] = 5.0
