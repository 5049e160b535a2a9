"""Single unpruned CART-style trees with per-split random feature subsets.

Trees are grown greedily to purity (subject to ``min_node_size``) using the
Gini impurity for classification and the residual sum of squares for
regression.  Structure is stored in flat arrays so prediction is a tight
loop; trees are immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import _grow_tree, _predict_rows
from .datasets import Dataset, TaskKind
from .seeding import rng_for

__all__ = ["TreeParams", "Tree", "train_tree", "predict_tree", "predict_rows"]


@dataclass(frozen=True)
class TreeParams:
    """Growth parameters.  ``defaults`` mirrors the usual library settings:
    mtry = floor(sqrt(p)) for classification and max(1, floor(p/3)) for
    regression; min_node_size 1 (classification) / 5 (regression)."""

    mtry: int
    min_node_size: int

    @staticmethod
    def defaults(task: TaskKind, p: int) -> "TreeParams":
        if task.is_classification:
            return TreeParams(mtry=max(1, int(math.isqrt(p))), min_node_size=1)
        return TreeParams(mtry=max(1, p // 3), min_node_size=5)

    def validate(self, p: int) -> None:
        if not 1 <= self.mtry <= p:
            raise ValueError(f"mtry must be in [1, {p}], got {self.mtry}")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")


@dataclass(frozen=True)
class Tree:
    """Flat-array binary tree.  ``feature[v] == -1`` marks a leaf whose
    prediction is ``leaf_value[v]`` (class index or mean response)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_value: np.ndarray
    routes: np.ndarray
    node_depth: np.ndarray
    has_routes: bool
    is_classification: bool
    n_classes: int
    feature_is_cat: np.ndarray
    feature_card: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def max_depth(self) -> int:
        return int(self.node_depth.max())


def train_tree(data: Dataset, row_indices, params: TreeParams | None = None,
               seed: int = 0) -> Tree:
    """Grow one tree on ``data.X[row_indices]`` (repeats allowed).

    Deterministic: identical (data, indices, params, seed) give structurally
    identical trees regardless of where or when they are trained.
    """
    rows = np.asarray(row_indices, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("row index list is empty")
    if rows.min() < 0 or rows.max() >= data.n:
        raise ValueError("row indices out of range")
    params = params or TreeParams.defaults(data.task, data.p)
    params.validate(data.p)

    xb = np.ascontiguousarray(data.X[rows])
    is_clf = data.task.is_classification
    if is_clf:
        y_cls = np.ascontiguousarray(data.y[rows])
        y_reg = np.zeros(1, dtype=np.float64)
    else:
        y_cls = np.zeros(1, dtype=np.int64)
        y_reg = np.ascontiguousarray(data.y[rows])

    n_try = min(params.mtry, data.p)
    if n_try < data.p:
        u = rng_for(seed, "splits").random((2 * rows.size + 1) * n_try)
    else:
        u = np.zeros(1, dtype=np.float64)

    is_cat = data.feature_is_categorical()
    card = data.feature_cardinality()
    out = _grow_tree(xb, y_cls, y_reg, is_cat, card, is_clf,
                     data.n_classes if is_clf else 1,
                     params.mtry, params.min_node_size, u)
    feature, threshold, left, right, leaf_value, routes, depth, has_routes = out
    return Tree(
        feature=np.ascontiguousarray(feature),
        threshold=np.ascontiguousarray(threshold),
        left=np.ascontiguousarray(left),
        right=np.ascontiguousarray(right),
        leaf_value=np.ascontiguousarray(leaf_value),
        routes=np.ascontiguousarray(routes),
        node_depth=np.ascontiguousarray(depth),
        has_routes=bool(has_routes),
        is_classification=is_clf,
        n_classes=data.n_classes if is_clf else 0,
        feature_is_cat=is_cat,
        feature_card=card,
    )


def _validate_row(tree: Tree, row: np.ndarray) -> None:
    if row.shape != (tree.feature_is_cat.shape[0],):
        raise ValueError(
            f"row has {row.shape} features, tree expects {tree.feature_is_cat.shape[0]}")
    for j in np.nonzero(tree.feature_is_cat)[0]:
        v = row[j]
        if v != int(v) or not 0 <= int(v) < tree.feature_card[j]:
            raise ValueError(
                f"feature {j}: level code {v!r} outside declared cardinality "
                f"{tree.feature_card[j]}")


def predict_tree(tree: Tree, row) -> int | float:
    """Predict a single feature vector (class index or real value)."""
    row = np.asarray(row, dtype=np.float64)
    _validate_row(tree, row)
    node = 0
    while tree.feature[node] >= 0:
        f = tree.feature[node]
        if tree.feature_is_cat[f]:
            go_left = tree.routes[node, int(row[f])] == 0
        else:
            go_left = row[f] <= tree.threshold[node]
        node = tree.left[node] if go_left else tree.right[node]
    value = tree.leaf_value[node]
    return int(value) if tree.is_classification else float(value)


def predict_rows(tree: Tree, X: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Batch prediction for rows of a coded feature matrix (as floats)."""
    return _predict_rows(np.ascontiguousarray(X, dtype=np.float64),
                         np.ascontiguousarray(rows, dtype=np.int64),
                         tree.feature, tree.threshold, tree.left, tree.right,
                         tree.leaf_value, tree.routes, tree.feature_is_cat,
                         tree.has_routes)
