import numpy as np
import pytest

from grouped_bart.logic.errors import GroupViolationError, InvalidInputError, InvalidMoveError
from grouped_bart.logic.treecore import (
    ROOT_ID,
    Change,
    Grow,
    Internal,
    Leaf,
    Prune,
    RegressionTree,
    SplitRule,
    apply_move,
    evaluate,
    leaf_assignments,
)


def two_leaf_tree(left=2.0, right=-1.0) -> RegressionTree:
    return apply_move(RegressionTree.stump({0, 1}), Grow(ROOT_ID, SplitRule(0, 1.5), left, right))


def three_leaf_tree() -> RegressionTree:
    tree = apply_move(RegressionTree.stump({0, 1}), Grow(ROOT_ID, SplitRule(0, 0.5), 1.0, 0.0))
    right = tree.nodes[ROOT_ID].right
    return apply_move(tree, Grow(right, SplitRule(1, 0.5), 2.0, 3.0))


def test_stump_evaluates_to_its_leaf_value():
    assert evaluate(RegressionTree.stump({0}), np.array([3.0, -7.0])) == 0.0


def test_routing_sends_ties_left():
    tree = two_leaf_tree()
    assert evaluate(tree, np.array([1.0, 9.9])) == 2.0
    assert evaluate(tree, np.array([1.5, 0.0])) == 2.0
    assert evaluate(tree, np.array([1.6, 0.0])) == -1.0


def test_three_leaf_tree_hand_trace():
    tree = three_leaf_tree()
    assert evaluate(tree, np.array([0.7, 0.7])) == 3.0
    assert evaluate(tree, np.array([0.7, 0.2])) == 2.0
    assert evaluate(tree, np.array([0.1, 0.9])) == 1.0


def test_evaluate_rejects_non_finite_input():
    with pytest.raises(InvalidInputError):
        evaluate(two_leaf_tree(), np.array([np.nan, 0.0]))


def test_leaf_assignments_of_stump():
    assign = leaf_assignments(RegressionTree.stump({0}), np.zeros((5, 2)))
    assert assign.tolist() == [ROOT_ID] * 5


def test_leaf_assignments_split_rows():
    assign = leaf_assignments(two_leaf_tree(), np.array([[1.0, 0.0], [2.0, 0.0]]))
    assert assign[0] != assign[1]


def test_leaf_assignments_agree_with_evaluate():
    tree = three_leaf_tree()
    tree = apply_move(tree, Grow(tree.nodes[ROOT_ID].left, SplitRule(1, 0.3), 4.0, 5.0))
    assert tree.num_leaves == 4
    X = np.random.default_rng(0).uniform(size=(50, 2))
    assign = leaf_assignments(tree, X)
    values = tree.leaf_value_array()[assign]
    np.testing.assert_array_equal(values, [evaluate(tree, x) for x in X])
    assert np.bincount(assign).sum() == 50
    assert set(assign.tolist()) <= set(tree.leaves)


def test_leaf_assignments_need_enough_columns():
    with pytest.raises(InvalidInputError):
        leaf_assignments(three_leaf_tree(), np.zeros((3, 1)))


def test_grow_then_prune_round_trip():
    stump = RegressionTree.stump({0, 1})
    grown = apply_move(stump, Grow(ROOT_ID, SplitRule(1, 0.25)))
    assert grown.num_leaves == 2
    assert grown.max_depth == 1
    assert grown.prunable_nodes == [ROOT_ID]
    pruned = apply_move(grown, Prune(ROOT_ID))
    assert pruned.is_stump()
    assert pruned == stump
    # the original is untouched
    assert stump.is_stump() and grown.num_leaves == 2


def test_change_keeps_shape_and_replaces_rule():
    tree = two_leaf_tree()
    changed = apply_move(tree, Change(ROOT_ID, SplitRule(1, 0.75)))
    assert changed.leaves == tree.leaves
    assert changed.nodes[ROOT_ID].rule == SplitRule(1, 0.75)
    assert tree.nodes[ROOT_ID].rule == SplitRule(0, 1.5)


def test_grow_outside_group_is_rejected():
    with pytest.raises(GroupViolationError):
        apply_move(RegressionTree.stump({0}), Grow(ROOT_ID, SplitRule(1, 0.5)))


def test_change_outside_group_is_rejected():
    tree = apply_move(RegressionTree.stump({0}), Grow(ROOT_ID, SplitRule(0, 0.5)))
    with pytest.raises(GroupViolationError):
        apply_move(tree, Change(ROOT_ID, SplitRule(3, 0.5)))


@pytest.mark.parametrize("move", [
    Grow(ROOT_ID, SplitRule(0, 0.5)),  # root is internal in the two-leaf tree
    Prune(1),  # a leaf
    Change(2, SplitRule(0, 0.5)),
    Grow(42, SplitRule(0, 0.5)),
])
def test_moves_on_wrong_node_kind_are_invalid(move):
    with pytest.raises(InvalidMoveError):
        apply_move(two_leaf_tree(), move)


def test_prune_needs_leaf_children():
    with pytest.raises(InvalidMoveError):
        apply_move(three_leaf_tree(), Prune(ROOT_ID))


def test_grow_rejects_non_finite_leaf_values():
    with pytest.raises(InvalidMoveError):
        apply_move(RegressionTree.stump({0}), Grow(ROOT_ID, SplitRule(0, 0.5), np.inf, 0.0))


def test_depths_follow_the_structure():
    tree = three_leaf_tree()
    depths = {i: node.depth for i, node in tree.nodes.items()}
    assert depths[ROOT_ID] == 0
    assert isinstance(tree.nodes[ROOT_ID], Internal)
    assert tree.max_depth == 2
    assert all(isinstance(tree.nodes[i], Leaf) for i in tree.leaves)


def test_serialized_form_is_nested_and_carries_group():
    payload = two_leaf_tree().to_dict()
    assert payload == {
        "var": 0, "cut": 1.5, "left": {"mu": 2.0}, "right": {"mu": -1.0}, "group": [0, 1],
    }
    restored = RegressionTree.from_dict(payload)
    assert restored == two_leaf_tree()
    assert evaluate(restored, np.array([1.0, 0.0])) == 2.0


def test_deserializing_a_split_outside_the_group_fails():
    payload = two_leaf_tree().to_dict()
    payload["group"] = [1]
    with pytest.raises(GroupViolationError):
        RegressionTree.from_dict(payload)


def test_with_leaf_values_only_touches_leaves():
    tree = two_leaf_tree()
    left, right = tree.leaves
    updated = tree.with_leaf_values({left: 0.25})
    assert updated.nodes[left].mu == 0.25
    assert updated.nodes[right].mu == -1.0
    with pytest.raises(InvalidMoveError):
        tree.with_leaf_values({ROOT_ID: 1.0})
