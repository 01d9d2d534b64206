"""
Binary regression trees used as weak learners.

A tree is an immutable value: structural edits (grow, prune, change) return a
new tree and leave the original untouched, so a rejected proposal needs no
undo. Nodes are keyed by small integer ids handed out in creation order; the
root is always id 0. Observations with ``x[var] <= cut`` go left.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

import numpy as np

from grouped_bart.logic.errors import GroupViolationError, InvalidInputError, InvalidMoveError

logger = logging.getLogger(__name__)

ROOT_ID = 0
MIN_LEAF_SIZE = 5


@dataclass(frozen=True)
class SplitRule:
    variable: int
    threshold: float


@dataclass(frozen=True)
class Leaf:
    mu: float
    depth: int = 0


@dataclass(frozen=True)
class Internal:
    rule: SplitRule
    left: int
    right: int
    depth: int = 0


Node = Leaf | Internal


# --- Structural edits ---

@dataclass(frozen=True)
class Grow:
    leaf_id: int
    rule: SplitRule
    left_mu: float = 0.0
    right_mu: float = 0.0


@dataclass(frozen=True)
class Prune:
    node_id: int
    mu: float = 0.0  # value of the leaf that replaces the pruned pair


@dataclass(frozen=True)
class Change:
    node_id: int
    rule: SplitRule


Move = Grow | Prune | Change


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """A binary tree restricted to split on the variables in ``group``.

    ``nodes`` is never mutated after construction; every edit goes through
    :func:`apply_move` or :meth:`with_leaf_values`.
    """
    nodes: Mapping[int, Node]
    group: frozenset[int]
    next_id: int = 1
    _leaf_ids: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "group", frozenset(int(v) for v in self.group))
        object.__setattr__(
            self, "_leaf_ids",
            tuple(sorted(i for i, n in self.nodes.items() if isinstance(n, Leaf))),
        )

    @classmethod
    def stump(cls, group: Iterable[int], mu: float = 0.0) -> "RegressionTree":
        return cls(nodes={ROOT_ID: Leaf(float(mu), 0)}, group=frozenset(group), next_id=1)

    # --- Shape queries ---
    @property
    def leaves(self) -> tuple[int, ...]:
        return self._leaf_ids

    @property
    def num_leaves(self) -> int:
        return len(self._leaf_ids)

    @property
    def internal_nodes(self) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if isinstance(n, Internal))

    @property
    def prunable_nodes(self) -> list[int]:
        """Internal nodes whose two children are both leaves."""
        return [
            i for i in self.internal_nodes
            if isinstance(self.nodes[self.nodes[i].left], Leaf)
            and isinstance(self.nodes[self.nodes[i].right], Leaf)
        ]

    @property
    def max_depth(self) -> int:
        return max(self.nodes[i].depth for i in self._leaf_ids)

    def is_stump(self) -> bool:
        return len(self.nodes) == 1

    def subtree_leaves(self, node_id: int) -> list[int]:
        out, stack = [], [node_id]
        while stack:
            current = stack.pop()
            node = self.nodes[current]
            if isinstance(node, Leaf):
                out.append(current)
            else:
                stack.extend((node.right, node.left))
        return sorted(out)

    def split_variables(self) -> set[int]:
        return {self.nodes[i].rule.variable for i in self.internal_nodes}

    def leaf_value_array(self) -> np.ndarray:
        """Leaf values indexed by node id (zeros at internal ids)."""
        values = np.zeros(self.next_id)
        for i in self._leaf_ids:
            values[i] = self.nodes[i].mu
        return values

    def with_leaf_values(self, values: Mapping[int, float]) -> "RegressionTree":
        nodes = dict(self.nodes)
        for leaf_id, mu in values.items():
            node = nodes[leaf_id]
            if not isinstance(node, Leaf):
                raise InvalidMoveError(f"node {leaf_id} is not a leaf")
            if not np.isfinite(mu):
                raise InvalidMoveError(f"non-finite leaf value {mu} for leaf {leaf_id}")
            nodes[leaf_id] = Leaf(float(mu), node.depth)
        return RegressionTree(nodes=nodes, group=self.group, next_id=self.next_id)

    # --- Serialization ---
    def to_dict(self) -> dict[str, Any]:
        def encode(node_id: int) -> dict[str, Any]:
            node = self.nodes[node_id]
            if isinstance(node, Leaf):
                return {"mu": node.mu}
            return {
                "var": node.rule.variable,
                "cut": node.rule.threshold,
                "left": encode(node.left),
                "right": encode(node.right),
            }

        payload = encode(ROOT_ID)
        payload["group"] = sorted(self.group)
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "RegressionTree":
        nodes: dict[int, Node] = {}
        counter = [1]

        def decode(node_id: int, body: Mapping[str, Any], depth: int) -> None:
            if "mu" in body:
                nodes[node_id] = Leaf(float(body["mu"]), depth)
                return
            left, right = counter[0], counter[0] + 1
            counter[0] += 2
            nodes[node_id] = Internal(
                SplitRule(int(body["var"]), float(body["cut"])), left, right, depth
            )
            decode(left, body["left"], depth + 1)
            decode(right, body["right"], depth + 1)

        decode(ROOT_ID, payload, 0)
        tree = cls(nodes=nodes, group=frozenset(payload["group"]), next_id=counter[0])
        bad = tree.split_variables() - tree.group
        if bad:
            raise GroupViolationError(f"serialized tree splits on {sorted(bad)} outside its group")
        return tree

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RegressionTree):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _check_rows(tree: RegressionTree, X: np.ndarray) -> None:
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("predictor values must be finite")
    used = tree.split_variables()
    if used and X.shape[-1] <= max(used):
        raise InvalidInputError(
            f"tree splits on variable {max(used)} but input has {X.shape[-1]} columns"
        )


def evaluate(tree: RegressionTree, x: np.ndarray) -> float:
    """Leaf value reached by routing one predictor vector through the tree."""
    x = np.asarray(x, dtype=float)
    _check_rows(tree, x)
    node = tree.nodes[ROOT_ID]
    while isinstance(node, Internal):
        node = tree.nodes[node.left if x[node.rule.variable] <= node.rule.threshold else node.right]
    return node.mu


def route_rows(tree: RegressionTree, X: np.ndarray, rows: np.ndarray, start: int = ROOT_ID) -> np.ndarray:
    """Leaf id for each of ``rows`` of X, routing from node ``start``; no validation."""
    out = np.empty(len(rows), dtype=np.int64)
    stack = [(start, np.arange(len(rows)))]
    while stack:
        node_id, positions = stack.pop()
        node = tree.nodes[node_id]
        if isinstance(node, Leaf):
            out[positions] = node_id
            continue
        if positions.size == 0:
            continue
        go_left = X[rows[positions], node.rule.variable] <= node.rule.threshold
        stack.append((node.left, positions[go_left]))
        stack.append((node.right, positions[~go_left]))
    return out


def leaf_assignments(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    """Leaf id per row of X; rows sharing an id share a leaf."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError(f"expected a 2-D predictor matrix, got shape {X.shape}")
    _check_rows(tree, X)
    return route_rows(tree, X, np.arange(X.shape[0]))


def apply_move(tree: RegressionTree, move: Move) -> RegressionTree:
    nodes = dict(tree.nodes)
    next_id = tree.next_id

    if isinstance(move, Grow):
        node = nodes.get(move.leaf_id)
        if not isinstance(node, Leaf):
            raise InvalidMoveError(f"GROW target {move.leaf_id} is not a leaf")
        if move.rule.variable not in tree.group:
            raise GroupViolationError(
                f"variable {move.rule.variable} is not in the tree's group {sorted(tree.group)}"
            )
        if not (np.isfinite(move.left_mu) and np.isfinite(move.right_mu)):
            raise InvalidMoveError("GROW leaf values must be finite")
        left, right = next_id, next_id + 1
        nodes[move.leaf_id] = Internal(move.rule, left, right, node.depth)
        nodes[left] = Leaf(float(move.left_mu), node.depth + 1)
        nodes[right] = Leaf(float(move.right_mu), node.depth + 1)
        next_id += 2

    elif isinstance(move, Prune):
        node = nodes.get(move.node_id)
        if not isinstance(node, Internal):
            raise InvalidMoveError(f"PRUNE target {move.node_id} is not an internal node")
        if not (isinstance(nodes[node.left], Leaf) and isinstance(nodes[node.right], Leaf)):
            raise InvalidMoveError(f"PRUNE target {move.node_id} has non-leaf children")
        del nodes[node.left], nodes[node.right]
        nodes[move.node_id] = Leaf(float(move.mu), node.depth)

    elif isinstance(move, Change):
        node = nodes.get(move.node_id)
        if not isinstance(node, Internal):
            raise InvalidMoveError(f"CHANGE target {move.node_id} is not an internal node")
        if move.rule.variable not in tree.group:
            raise GroupViolationError(
                f"variable {move.rule.variable} is not in the tree's group {sorted(tree.group)}"
            )
        nodes[move.node_id] = Internal(move.rule, node.left, node.right, node.depth)

    else:
        raise InvalidMoveError(f"unknown move {move!r}")

    return RegressionTree(nodes=nodes, group=tree.group, next_id=next_id)
