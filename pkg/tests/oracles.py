"""Independent reference implementations used only as test oracles.

Everything here is deliberately slow and simple: exhaustive enumeration,
double loops, full-support sums.  None of it shares code with the package
paths it checks.
"""

from __future__ import annotations

import numpy as np


# ---------------------------------------------------------------------------
# exhaustive-outcome expectation of the error rate with random tie-breaking
# ---------------------------------------------------------------------------


def enum_expected_error_rate(eps: float, t: int) -> float:
    """Average over all 2^T per-tree error outcome vectors of the forest
    error indicator, weighting each vector by its Bernoulli probability.
    Ties (exactly half the votes wrong) count one half."""
    outcomes = np.arange(2 ** t, dtype=np.uint64)
    wrong = np.zeros(outcomes.shape[0], dtype=np.int64)
    for bit in range(t):
        wrong += ((outcomes >> np.uint64(bit)) & np.uint64(1)).astype(np.int64)
    weights = eps ** wrong * (1.0 - eps) ** (t - wrong)
    value = (wrong > t / 2).astype(np.float64) + 0.5 * (wrong == t / 2)
    return float(np.sum(weights * value))


# ---------------------------------------------------------------------------
# AUC by the definition: the full double sum over positive/negative pairs
# ---------------------------------------------------------------------------


def auc_double_sum(y: np.ndarray, scores: np.ndarray) -> float:
    pos = scores[y == 1]
    neg = scores[y != 1]
    s = (pos[:, None] > neg[None, :]).astype(np.float64)
    s += 0.5 * (pos[:, None] == neg[None, :])
    return float(np.sum(s)) / (pos.shape[0] * neg.shape[0])


# ---------------------------------------------------------------------------
# Kendall tau-b by explicit pair iteration
# ---------------------------------------------------------------------------


def kendall_tau_b_pairs(x, y) -> float:
    import math

    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0:
                ties_x += 1
            if dy == 0:
                ties_y += 1
            if dx == 0 or dy == 0:
                continue
            if (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    if ties_x == n0 or ties_y == n0:
        return float("nan")
    return (concordant - discordant) / math.sqrt(float(n0 - ties_x) * float(n0 - ties_y))


# ---------------------------------------------------------------------------
# greedy CART with exhaustive split search (no feature subsampling)
# ---------------------------------------------------------------------------


class OracleTree:
    """Plain recursive CART for numeric features: every feature, every
    midpoint threshold, Gini (classification) or RSS (regression); ties go
    to the lowest feature index then lowest threshold."""

    def __init__(self, classification: bool, min_node_size: int = 1):
        self.classification = classification
        self.min_node_size = min_node_size
        self.root = None

    def fit(self, X, y):
        self.root = self._build(np.asarray(X, float), np.asarray(y))
        return self

    def _leaf(self, y):
        if self.classification:
            counts = np.bincount(y.astype(int))
            return {"leaf": int(np.argmax(counts))}
        return {"leaf": float(np.mean(y))}

    def _impurity(self, y):
        if self.classification:
            if y.shape[0] == 0:
                return 0.0
            freqs = np.bincount(y.astype(int)) / y.shape[0]
            return 1.0 - float(np.sum(freqs ** 2))
        return float(np.sum((y - np.mean(y)) ** 2)) if y.shape[0] else 0.0

    def _node_score(self, y):
        # weighted impurity in "total" units so parent/child are comparable
        if self.classification:
            return y.shape[0] * self._impurity(y)
        return self._impurity(y)

    def best_split(self, X, y):
        best = None
        parent = self._node_score(y)
        for f in range(X.shape[1]):
            values = np.unique(X[:, f])
            for lo, hi in zip(values[:-1], values[1:]):
                thr = lo + (hi - lo) / 2
                mask = X[:, f] <= thr
                child = self._node_score(y[mask]) + self._node_score(y[~mask])
                gain = parent - child
                if gain > 1e-12 and (best is None or gain > best[0] + 1e-12):
                    best = (gain, f, thr)
        return best

    def _build(self, X, y):
        n = y.shape[0]
        pure = (np.unique(y).shape[0] == 1) if self.classification else (np.ptp(y) == 0.0)
        if n < 2 or n < self.min_node_size or pure:
            return self._leaf(y)
        best = self.best_split(X, y)
        if best is None:
            return self._leaf(y)
        _, f, thr = best
        mask = X[:, f] <= thr
        return {
            "feature": f,
            "threshold": thr,
            "left": self._build(X[mask], y[mask]),
            "right": self._build(X[~mask], y[~mask]),
        }

    def predict_one(self, row):
        node = self.root
        while "leaf" not in node:
            node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
        return node["leaf"]

    def predict(self, X):
        return np.array([self.predict_one(row) for row in np.asarray(X, float)])


def oracle_best_gain(X, y, classification: bool) -> float | None:
    """Impurity decrease of the brute-force best split (normalized per
    observation for classification, total for regression)."""
    tree = OracleTree(classification)
    best = tree.best_split(np.asarray(X, float), np.asarray(y))
    if best is None:
        return None
    gain = best[0]
    return gain / len(y) if classification else gain
